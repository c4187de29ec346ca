#pragma once

// Software rasterization of closed contours into binary masks.
//
// Pixel rule (shared by every rasterizer here): vertices are snapped to a
// 1/256-pixel fixed-point grid; pixel (r, c) is covered by a region iff its
// center (c + 0.5, r + 0.5), displaced by an infinitesimal (+eps, +eps^2),
// lies inside. The displacement is the usual top-left tie-break: centers on a
// left or top edge are in, centers on a right or bottom edge are out.
// Coordinates passed in are unit crop coordinates scaled by (width, height).

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "curvegcn/geometry.hpp"

namespace curvegcn {

struct Mask {
  int height = 0;
  int width = 0;
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), values(decltype(values)::Zero(h, w)) {}

  double& operator()(int r, int c) { return values(r, c); }
  double operator()(int r, int c) const { return values(r, c); }
  double sum() const { return values.sum(); }
  bool same_shape(const Mask& o) const { return height == o.height && width == o.width; }
};

inline constexpr int kSubpixelBits = 8;
inline constexpr std::int64_t kSubpixelScale = std::int64_t{1} << kSubpixelBits;

struct FixedPoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
};

// Unit coordinates -> snapped pixel coordinates.
std::vector<FixedPoint> to_fixed(const PointList<double>& unit_points, int height, int width);

template <typename Scalar>
std::vector<FixedPoint> to_fixed(const PointList<Scalar>& unit_points, int height, int width) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return to_fixed(static_cast<const PointList<double>&>(unit_points), height, width);
  } else {
    return to_fixed(PointList<double>(unit_points.template cast<double>()), height, width);
  }
}

// +1 / -1: which side of the directed line a->b the displaced pixel center
// falls on (+1 means positive cross product). Never 0 for a != b.
int edge_side(const FixedPoint& a, const FixedPoint& b, const FixedPoint& p);

// Exact orientation of a triangle: +1, -1, or 0 for zero area.
int triangle_orientation(const FixedPoint& a, const FixedPoint& b, const FixedPoint& c);

inline FixedPoint pixel_center(int r, int c) {
  return {std::int64_t{c} * kSubpixelScale + kSubpixelScale / 2, std::int64_t{r} * kSubpixelScale + kSubpixelScale / 2};
}

// Fan decomposition around the first point: triangles (p0, p_j, p_{j+1}) for
// j = 1 .. K-2. The sign is the triangle's orientation (+1 when its signed
// area is positive in pixel coordinates, i.e. clockwise on screen).
struct TriangleFan {
  struct Triangle {
    int a = 0, b = 0, c = 0;
    int sign = 0;
  };
  FixedPoint apex;
  std::vector<FixedPoint> vertices;
  std::vector<Triangle> triangles;
};

TriangleFan triangle_fan(const std::vector<FixedPoint>& pts);

// Signed per-pixel sum of the fan triangles (the winding number).
Eigen::ArrayXXi render_winding(const std::vector<FixedPoint>& pts, int height, int width);

// Independent scanline rasterizer: nonzero-winding fill of the closed polyline.
Eigen::ArrayXXi scanline_winding(const std::vector<FixedPoint>& pts, int height, int width);

Mask winding_to_mask(const Eigen::ArrayXXi& winding);

// Signed triangle-fan rendering clamped to {0, 1}.
template <typename Scalar>
Mask render(const PointList<Scalar>& unit_points, int height, int width) {
  if (unit_points.rows() < 3) throw GeometryError("render: need at least 3 contour points");
  return winding_to_mask(render_winding(to_fixed(unit_points, height, width), height, width));
}

// Ground-truth path: scanline nonzero-winding fill.
template <typename Scalar>
Mask rasterize_polygon(const PointList<Scalar>& unit_points, int height, int width) {
  if (unit_points.rows() < 3) throw GeometryError("rasterize_polygon: need at least 3 vertices");
  return winding_to_mask(scanline_winding(to_fixed(unit_points, height, width), height, width));
}

// Gradient of L1(M, M_gt) with respect to the contour points (unit
// coordinates). Each 1-pixel shift difference of the mask is assigned to the
// contour edge crossing between the two pixel centres and split between the
// edge's endpoints by their linear weights.
PointList<double> render_backward(const PointList<double>& unit_points, const Mask& rendered, const Mask& target);

template <typename Scalar>
PointList<Scalar> render_backward(const PointList<Scalar>& unit_points, const Mask& rendered, const Mask& target) {
  if constexpr (std::is_same_v<Scalar, double>) {
    return render_backward(static_cast<const PointList<double>&>(unit_points), rendered, target);
  } else {
    return render_backward(PointList<double>(unit_points.template cast<double>()), rendered, target)
        .template cast<Scalar>();
  }
}

double l1_distance(const Mask& a, const Mask& b);

// |a and b| / |a or b|; 1 when both are empty.
double iou(const Mask& a, const Mask& b);

// Mask pixels 4-adjacent to background (outside the image counts as background).
Mask boundary(const Mask& m);

// Boundary F measure with a Euclidean slack of px_threshold pixels.
double boundary_f(const Mask& a, const Mask& b, double px_threshold);

void write_pgm(const Mask& m, const std::string& path);
Mask read_pgm(const std::string& path);

}  // namespace curvegcn
