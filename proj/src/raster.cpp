#include "curvegcn/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace curvegcn {

std::vector<FixedPoint> to_fixed(const PointList<double>& unit_points, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("rasterizer: empty canvas");
  require_finite(unit_points, "contour points");
  std::vector<FixedPoint> out(unit_points.rows());
  const double sx = double(width) * double(kSubpixelScale), sy = double(height) * double(kSubpixelScale);
  for (Index i = 0; i < unit_points.rows(); ++i)
    out[i] = {std::llround(unit_points(i, 0) * sx), std::llround(unit_points(i, 1) * sy)};
  return out;
}

int edge_side(const FixedPoint& a, const FixedPoint& b, const FixedPoint& p) {
  const std::int64_t cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  if (cross > 0) return 1;
  if (cross < 0) return -1;
  // On the line: the displacement (+eps, +eps^2) decides.
  if (b.y != a.y) return b.y < a.y ? 1 : -1;
  if (b.x != a.x) return b.x > a.x ? 1 : -1;
  return 0;
}

int triangle_orientation(const FixedPoint& a, const FixedPoint& b, const FixedPoint& c) {
  const std::int64_t cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  return cross > 0 ? 1 : (cross < 0 ? -1 : 0);
}

TriangleFan triangle_fan(const std::vector<FixedPoint>& pts) {
  TriangleFan fan;
  fan.vertices = pts;
  if (pts.empty()) return fan;
  fan.apex = pts[0];
  for (std::size_t j = 1; j + 1 < pts.size(); ++j)
    fan.triangles.push_back({0, int(j), int(j + 1), triangle_orientation(pts[0], pts[j], pts[j + 1])});
  return fan;
}

namespace {

// Pixel index range whose centers can fall inside [lo, hi] (fixed point).
void center_range(std::int64_t lo, std::int64_t hi, int extent, int& first, int& last) {
  const auto half = kSubpixelScale / 2;
  first = int(std::max<std::int64_t>(0, (lo - half) / kSubpixelScale - 1));
  last = int(std::min<std::int64_t>(extent - 1, (hi - half) / kSubpixelScale + 1));
}

struct PixelBox {
  int r0 = 0, r1 = -1, c0 = 0, c1 = -1;
  bool empty() const { return r1 < r0 || c1 < c0; }
};

PixelBox triangle_box(const FixedPoint& a, const FixedPoint& b, const FixedPoint& c, int height, int width) {
  PixelBox box;
  center_range(std::min({a.y, b.y, c.y}), std::max({a.y, b.y, c.y}), height, box.r0, box.r1);
  center_range(std::min({a.x, b.x, c.x}), std::max({a.x, b.x, c.x}), width, box.c0, box.c1);
  return box;
}

bool inside(const FixedPoint& a, const FixedPoint& b, const FixedPoint& c, int orientation, const FixedPoint& p) {
  return edge_side(a, b, p) == orientation && edge_side(b, c, p) == orientation && edge_side(c, a, p) == orientation;
}

}  // namespace

Eigen::ArrayXXi render_winding(const std::vector<FixedPoint>& pts, int height, int width) {
  Eigen::ArrayXXi winding = Eigen::ArrayXXi::Zero(height, width);
  const TriangleFan fan = triangle_fan(pts);
  for (const auto& tri : fan.triangles) {
    if (tri.sign == 0) continue;
    const FixedPoint &a = pts[tri.a], &b = pts[tri.b], &c = pts[tri.c];
    const PixelBox box = triangle_box(a, b, c, height, width);
    for (int r = box.r0; r <= box.r1; ++r)
      for (int col = box.c0; col <= box.c1; ++col)
        if (inside(a, b, c, tri.sign, pixel_center(r, col))) winding(r, col) += tri.sign;
  }
  return winding;
}

Eigen::ArrayXXi scanline_winding(const std::vector<FixedPoint>& pts, int height, int width) {
  Eigen::ArrayXXi winding = Eigen::ArrayXXi::Zero(height, width);
  const std::size_t n = pts.size();
  std::vector<int> delta(width + 1);
  for (int r = 0; r < height; ++r) {
    const std::int64_t y = pixel_center(r, 0).y;
    std::fill(delta.begin(), delta.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const FixedPoint& a = pts[i];
      const FixedPoint& b = pts[(i + 1) % n];
      if (a.y == b.y) continue;
      // Half-open span: the center is displaced downward by eps^2.
      if (y < std::min(a.y, b.y) || y >= std::max(a.y, b.y)) continue;
      const int dir = b.y < a.y ? 1 : -1;
      // Columns whose center lies right of the crossing form a suffix.
      int lo = 0, hi = width;
      while (lo < hi) {
        const int mid = (lo + hi) / 2;
        if (edge_side(a, b, pixel_center(r, mid)) == dir)
          hi = mid;
        else
          lo = mid + 1;
      }
      delta[lo] += dir;
    }
    int running = 0;
    for (int c = 0; c < width; ++c) {
      running += delta[c];
      winding(r, c) = running;
    }
  }
  return winding;
}

Mask winding_to_mask(const Eigen::ArrayXXi& winding) {
  Mask m(int(winding.rows()), int(winding.cols()));
  m.values = (winding != 0).cast<double>();
  return m;
}

namespace {

// A contour edge crossing the segment between two neighbouring pixel centres.
struct Crossing {
  Index edge = 0;
  double t = 0;  // position along the edge, 0 at its first vertex
  int r = 0, c = 0;  // the pixel on the far side of the crossing
};

// Crossings of every contour edge with the row (axis 0) or column (axis 1)
// centre lines. The pixel recorded is the first centre past the crossing.
std::vector<Crossing> centre_line_crossings(const std::vector<Eigen::Vector2d>& v, int axis, int h, int w) {
  const int across = axis == 0 ? 1 : 0;
  const int lines = axis == 0 ? h : w, cells = axis == 0 ? w : h;
  std::vector<Crossing> out;
  const Index k = Index(v.size());
  for (Index i = 0; i < k; ++i) {
    const Eigen::Vector2d& a = v[std::size_t(i)];
    const Eigen::Vector2d& b = v[std::size_t((i + 1) % k)];
    if (a(across) == b(across)) continue;
    const double lo = std::min(a(across), b(across)), hi = std::max(a(across), b(across));
    const int first = std::max(0, int(std::ceil(lo - 0.5)));
    const int last = std::min(lines - 1, int(std::ceil(hi - 0.5)) - 1);
    for (int l = first; l <= last; ++l) {
      const double t = (l + 0.5 - a(across)) / (b(across) - a(across));
      const double at = a(axis) + t * (b(axis) - a(axis));
      const int q = int(std::floor(at - 0.5)) + 1;
      if (q < 0 || q >= cells) continue;
      out.push_back({i, t, axis == 0 ? l : q, axis == 0 ? q : l});
    }
  }
  return out;
}

}  // namespace

PointList<double> render_backward(const PointList<double>& unit_points, const Mask& rendered, const Mask& target) {
  if (!rendered.same_shape(target)) throw ShapeError("render_backward: resolution mismatch");
  const int h = rendered.height, w = rendered.width;
  const Index k = unit_points.rows();
  PointList<double> grad = PointList<double>::Zero(k, 2);
  const Eigen::ArrayXXd g_mask = (rendered.values - target.values).sign();
  if ((g_mask == 0).all()) return grad;

  const auto fixed = to_fixed(unit_points, h, w);
  std::vector<Eigen::Vector2d> v(fixed.size());
  for (std::size_t i = 0; i < fixed.size(); ++i)
    v[i] = {double(fixed[i].x) / double(kSubpixelScale), double(fixed[i].y) / double(kSubpixelScale)};
  const auto m = [&](int r, int c) { return r < 0 || c < 0 ? 0.0 : rendered(r, c); };

  Eigen::ArrayXXi hits(h, w);
  for (int axis = 0; axis < 2; ++axis) {
    const auto crossings = centre_line_crossings(v, axis, h, w);
    hits.setZero();
    for (const auto& x : crossings) ++hits(x.r, x.c);
    for (const auto& x : crossings) {
      const int pr = axis == 0 ? x.r : x.r - 1, pc = axis == 0 ? x.c - 1 : x.c;
      // A one-pixel shift forward copies the near pixel onto the far one; a
      // shift back does the reverse. Average the two loss changes.
      const double dm = m(pr, pc) - rendered(x.r, x.c);
      const double g = g_mask(x.r, x.c) + (pr < 0 || pc < 0 ? 0.0 : g_mask(pr, pc));
      if (dm == 0 || g == 0) continue;
      const double d = 0.5 * g * dm / hits(x.r, x.c);
      grad(x.edge, axis) += (1 - x.t) * d;
      grad((x.edge + 1) % k, axis) += x.t * d;
    }
  }
  grad.col(0) *= double(w);
  grad.col(1) *= double(h);
  return grad;
}

double l1_distance(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("l1_distance: shape mismatch");
  return (a.values - b.values).abs().sum();
}

double iou(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("iou: shape mismatch");
  const auto A = a.values > 0.5, B = b.values > 0.5;
  const double inter = (A && B).count(), uni = (A || B).count();
  return uni == 0 ? 1.0 : inter / uni;
}

Mask boundary(const Mask& m) {
  Mask out(m.height, m.width);
  const auto on = [&](int r, int c) {
    return r >= 0 && r < m.height && c >= 0 && c < m.width && m(r, c) > 0.5;
  };
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (on(r, c) && (!on(r - 1, c) || !on(r + 1, c) || !on(r, c - 1) || !on(r, c + 1))) out(r, c) = 1;
  return out;
}

namespace {

double matched_fraction(const Mask& from, const Mask& to, double threshold) {
  const int reach = int(std::floor(threshold));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx)
      if (dx * dx + dy * dy <= threshold * threshold) offsets.emplace_back(dy, dx);
  double total = 0, matched = 0;
  for (int r = 0; r < from.height; ++r)
    for (int c = 0; c < from.width; ++c) {
      if (from(r, c) < 0.5) continue;
      ++total;
      for (const auto& [dy, dx] : offsets) {
        const int rr = r + dy, cc = c + dx;
        if (rr >= 0 && rr < to.height && cc >= 0 && cc < to.width && to(rr, cc) > 0.5) {
          ++matched;
          break;
        }
      }
    }
  return total == 0 ? 0.0 : matched / total;
}

}  // namespace

double boundary_f(const Mask& a, const Mask& b, double px_threshold) {
  if (!a.same_shape(b)) throw ShapeError("boundary_f: shape mismatch");
  const Mask ba = boundary(a), bb = boundary(b);
  const bool ea = ba.sum() == 0, eb = bb.sum() == 0;
  if (ea && eb) return 1.0;
  if (ea || eb) return 0.0;
  const double precision = matched_fraction(ba, bb, px_threshold);
  const double recall = matched_fraction(bb, ba, px_threshold);
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

void write_pgm(const Mask& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "P5\n" << m.width << ' ' << m.height << "\n255\n";
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) out.put(m(r, c) > 0.5 ? char(255) : char(0));
  if (!out) throw IoError("failed writing " + path);
}

Mask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(static_cast<unsigned char>(ch))) {
        t.push_back(ch);
        break;
      }
    }
    while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) t.push_back(ch);
    return t;
  };
  if (token() != "P5") throw ParseError(path + ": not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw ParseError(path + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw ParseError(path + ": unsupported PGM header");
  Mask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int v = in.get();
      if (v == EOF) throw ParseError(path + ": truncated PGM data");
      m(r, c) = v * 2 > maxval ? 1.0 : 0.0;
    }
  return m;
}

}  // namespace curvegcn
