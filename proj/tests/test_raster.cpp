#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "curvegcn/raster.hpp"
#include "curvegcn/random.hpp"

using namespace curvegcn;

namespace {

// Winding number of the displaced pixel centre (cx + eps, cy + eps^2) by ray
// crossings, straight from the fixed-point vertices.
int winding_at(const std::vector<FixedPoint>& v, std::int64_t cx, std::int64_t cy) {
  int w = 0;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const FixedPoint a = v[i], b = v[(i + 1) % n];
    const bool a_below = a.y <= cy, b_below = b.y <= cy;
    if (a_below == b_below) continue;
    const std::int64_t c0 = (b.x - a.x) * (cy - a.y) - (b.y - a.y) * (cx - a.x);
    // Sign of c0 + eps^2 (bx - ax) - eps (by - ay); by != ay on a crossing.
    const int side = c0 != 0 ? (c0 > 0 ? 1 : -1) : (b.y - a.y > 0 ? -1 : 1);
    if (a_below && side > 0) ++w;   // upward edge, centre on its left
    if (!a_below && side < 0) --w;  // downward edge, centre on its right
  }
  return w;
}

Eigen::ArrayXXi oracle_winding(const std::vector<FixedPoint>& v, int h, int w) {
  Eigen::ArrayXXi out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const FixedPoint p = pixel_center(r, c);
      out(r, c) = winding_at(v, p.x, p.y);
    }
  return out;
}

PointList<double> star_polygon(int n, Rng& rng) {
  PointList<double> p(n, 2);
  const double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
  for (int i = 0; i < n; ++i) {
    const double a = 2 * M_PI * (i + rng.uniform(0, 0.9)) / n;
    const double r = rng.uniform(0.05, 0.3);
    p.row(i) << cx + r * std::cos(a), cy + r * std::sin(a);
  }
  return p;
}

PointList<double> rect(double x0, double y0, double x1, double y1) {
  PointList<double> p(4, 2);
  p << x0, y0, x1, y0, x1, y1, x0, y1;
  return p;
}

double brute_boundary_f(const Mask& a, const Mask& b, double t) {
  const Mask ba = boundary(a), bb = boundary(b);
  const auto matched = [&](const Mask& from, const Mask& to) {
    int total = 0, hit = 0;
    for (int r = 0; r < from.height; ++r)
      for (int c = 0; c < from.width; ++c) {
        if (from(r, c) == 0) continue;
        ++total;
        double best = 1e9;
        for (int rr = 0; rr < to.height; ++rr)
          for (int cc = 0; cc < to.width; ++cc)
            if (to(rr, cc) != 0) best = std::min(best, std::hypot(rr - r, cc - c));
        if (best <= t) ++hit;
      }
    return total == 0 ? 0.0 : double(hit) / total;
  };
  const double p = matched(ba, bb), rc = matched(bb, ba);
  return p + rc == 0 ? 0 : 2 * p * rc / (p + rc);
}

}  // namespace

TEST_CASE("axis-aligned square covers a 4x4 block of pixel centres") {
  const Mask m = render(rect(2.0 / 16, 3.0 / 16, 6.0 / 16, 7.0 / 16), 16, 16);
  CHECK(m.sum() == 16);
  for (int r = 3; r < 7; ++r)
    for (int c = 2; c < 6; ++c) CHECK(m(r, c) == 1);
}

TEST_CASE("top-left rule on centres exactly on edges") {
  // Edges pass through pixel centres at x = 2.5 and 5.5, y = 1.5 and 4.5.
  const Mask m = rasterize_polygon(rect(2.5 / 8, 1.5 / 8, 5.5 / 8, 4.5 / 8), 8, 8);
  CHECK(m(1, 2) == 1);  // top-left corner centre: in
  CHECK(m(1, 5) == 0);  // right edge: out
  CHECK(m(4, 2) == 0);  // bottom edge: out
  CHECK(m.sum() == 9);
  CHECK(render(rect(2.5 / 8, 1.5 / 8, 5.5 / 8, 4.5 / 8), 8, 8).values.isApprox(m.values));
}

TEST_CASE("collinear contour renders empty") {
  PointList<double> p(3, 2);
  p << 0.1, 0.1, 0.5, 0.5, 0.9, 0.9;
  CHECK(render(p, 16, 16).sum() == 0);
  CHECK_THROWS_AS(render(PointList<double>(2, 2), 4, 4), GeometryError);
}

TEST_CASE("fan and scanline windings equal the crossing-number oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const auto pts = to_fixed(star_polygon(3 + trial % 20, rng), 32, 32);
    const auto oracle = oracle_winding(pts, 32, 32);
    CHECK((render_winding(pts, 32, 32) == oracle).all());
    CHECK((scanline_winding(pts, 32, 32) == oracle).all());
  }
  // Self-intersecting contours too: both are winding numbers.
  for (int trial = 0; trial < 30; ++trial) {
    PointList<double> p(7, 2);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(0.05, 0.95);
    const auto pts = to_fixed(p, 24, 24);
    const auto oracle = oracle_winding(pts, 24, 24);
    CHECK((render_winding(pts, 24, 24) == oracle).all());
    CHECK((scanline_winding(pts, 24, 24) == oracle).all());
  }
}

TEST_CASE("render does not depend on the fan apex") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = star_polygon(12, rng);
    const Mask base = render(p, 40, 40);
    PointList<double> rolled(12, 2);
    const int s = 1 + trial % 11;
    for (int i = 0; i < 12; ++i) rolled.row(i) = p.row((i + s) % 12);
    CHECK((render(rolled, 40, 40).values == base.values).all());
  }
}

TEST_CASE("rendered area is within a perimeter of the shoelace area") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = star_polygon(10, rng);
    const int n = 64;
    PointList<double> px = p * double(n);
    double perimeter = 0;
    for (Index i = 0; i < 10; ++i) perimeter += (px.row((i + 1) % 10) - px.row(i)).norm();
    const Mask m = render(p, n, n);
    CHECK(std::abs(m.sum() - std::abs(signed_area(px))) <= perimeter);
  }
}

TEST_CASE("iou") {
  const Mask a = rasterize_polygon(rect(0, 0, 10.0 / 32, 10.0 / 32), 32, 32);
  const Mask b = rasterize_polygon(rect(5.0 / 32, 0, 15.0 / 32, 10.0 / 32), 32, 32);
  const Mask far = rasterize_polygon(rect(20.0 / 32, 20.0 / 32, 1, 1), 32, 32);
  CHECK(iou(a, a) == 1);
  CHECK(iou(a, far) == 0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3));
  CHECK(iou(Mask(4, 4), Mask(4, 4)) == 1);
  CHECK_THROWS_AS(iou(a, Mask(4, 4)), ShapeError);
  CHECK(l1_distance(a, b) == 100);
}

TEST_CASE("boundary F") {
  const Mask sq = rasterize_polygon(rect(4.0 / 24, 4.0 / 24, 14.0 / 24, 14.0 / 24), 24, 24);
  const Mask moved = rasterize_polygon(rect(9.0 / 24, 4.0 / 24, 19.0 / 24, 14.0 / 24), 24, 24);
  CHECK(boundary_f(sq, sq, 1) == 1);
  CHECK(boundary_f(sq, sq, 2) == 1);
  CHECK(boundary_f(sq, Mask(24, 24), 1) == 0);
  CHECK(boundary_f(sq, moved, 1) == brute_boundary_f(sq, moved, 1));
  CHECK(boundary_f(sq, moved, 2) == brute_boundary_f(sq, moved, 2));
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Mask a = render(star_polygon(9, rng), 24, 24), b = render(star_polygon(9, rng), 24, 24);
    CHECK(boundary_f(a, b, 1) == doctest::Approx(brute_boundary_f(a, b, 1)).epsilon(1e-15));
  }
  const Mask bd = boundary(sq);
  CHECK(bd.sum() == 36);
}

TEST_CASE("render backward") {
  Rng rng(5);
  const auto p = star_polygon(16, rng);
  const Mask m = render(p, 32, 32);
  CHECK(render_backward(p, m, m).isZero());

  // Triangle well inside a target that is also covered: no disagreement
  // within a pixel of it.
  PointList<double> tri(3, 2);
  tri << 0.4, 0.4, 0.6, 0.4, 0.5, 0.6;
  Mask full(32, 32);
  full.values.setOnes();
  Mask rendered = full;
  CHECK(render_backward(tri, rendered, full).isZero());
  CHECK_THROWS_AS(render_backward(tri, Mask(8, 8), full), ShapeError);
}

TEST_CASE("render backward on concentric squares points every vertex the right way") {
  const auto inner = rect(16.0 / 64, 16.0 / 64, 48.0 / 64, 48.0 / 64);
  const auto outer = rect(12.8 / 64, 12.8 / 64, 51.2 / 64, 51.2 / 64);
  const Mask small = rasterize_polygon(inner, 64, 64), big = rasterize_polygon(outer, 64, 64);
  // Too large: descent moves each corner toward the centre, by the same amount.
  const PointList<double> shrink = -render_backward(outer, big, small);
  // Too small: descent moves each corner away from the centre.
  const PointList<double> grow = -render_backward(inner, small, big);
  for (Index i = 0; i < 4; ++i) {
    const Eigen::RowVector2d out_dir = inner.row(i).array() - 0.5;
    CHECK((shrink.row(i).array() * out_dir.array() < 0).all());
    CHECK((grow.row(i).array() * out_dir.array() > 0).all());
    CHECK(shrink.row(i).cwiseAbs().isApprox(shrink.row(0).cwiseAbs()));
    CHECK(grow.row(i).cwiseAbs().isApprox(grow.row(0).cwiseAbs()));
  }
}

TEST_CASE("half-pixel step along the render gradient lowers the L1 mask distance") {
  Rng rng(7);
  int decreased = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = star_polygon(3 + trial % 18, rng), q = star_polygon(3 + trial % 18, rng);
    const Mask target = rasterize_polygon(q, 64, 64), m = render(p, 64, 64);
    const PointList<double> g = render_backward(p, m, target);
    const double largest = g.rowwise().norm().maxCoeff();
    if (largest == 0) continue;
    const PointList<double> moved = p - 0.5 / 64 * g / largest;
    decreased += l1_distance(render(moved, 64, 64), target) < l1_distance(m, target);
  }
  CHECK(decreased >= 45);
}

TEST_CASE("pgm round trip") {
  Rng rng(6);
  const Mask m = render(star_polygon(8, rng), 20, 30);
  const auto path = std::filesystem::temp_directory_path() / "curvegcn_mask_test.pgm";
  write_pgm(m, path.string());
  const Mask back = read_pgm(path.string());
  CHECK(back.height == 20);
  CHECK(back.width == 30);
  CHECK((back.values == m.values).all());
  std::filesystem::remove(path);
}
