#pragma once

#include <stdexcept>
#include <string>

namespace curvegcn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand extents disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Degenerate curves: coincident control points, zero perimeter, N < 3.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content; the message names the offending file.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace curvegcn
