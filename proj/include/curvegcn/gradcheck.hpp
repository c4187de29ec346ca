#pragma once

// Central finite-difference checks of every hand-written backward pass.
// Always runs in double precision.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "curvegcn/numerics.hpp"

namespace curvegcn {

struct GradcheckResult {
  std::string name;
  int cases = 0;
  double max_rel_error = 0;
  double tolerance = 0;
  double seconds = 0;

  bool passed() const { return cases > 0 && max_rel_error < tolerance; }
};

struct GradcheckOptions {
  int cases = 100;
  std::uint64_t seed = 1;
  double step = 1e-5;
};

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
double relative_error(const Vector<double>& a, const Vector<double>& b);

// Central differences of f at x.
Vector<double> numeric_gradient(const std::function<double(const Vector<double>&)>& f, const Vector<double>& x,
                                double h);

inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kSamplerTolerance = 1e-4;

// One entry per primitive / sampler.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt = {});

}  // namespace curvegcn
