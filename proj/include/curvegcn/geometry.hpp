#pragma once

// Closed control curves: circle initialization, centripetal Catmull-Rom
// evaluation with closure points, and uniform resampling with exact
// reverse-mode derivatives back to the control points.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

#include "curvegcn/errors.hpp"
#include "curvegcn/numerics.hpp"

namespace curvegcn {

enum class CurveKind { Polygon, Spline };

inline const char* to_string(CurveKind kind) { return kind == CurveKind::Polygon ? "polygon" : "spline"; }

inline CurveKind curve_kind_from_string(const std::string& s) {
  if (s == "polygon") return CurveKind::Polygon;
  if (s == "spline") return CurveKind::Spline;
  throw Error("unknown curve kind '" + s + "'");
}

template <typename Scalar>
using Point2 = Eigen::Matrix<Scalar, 2, 1>;

// One point per row.
template <typename Scalar>
using PointList = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

template <typename Scalar>
struct ControlCurve {
  PointList<Scalar> points;
  CurveKind kind = CurveKind::Spline;

  Index size() const { return points.rows(); }
  Point2<Scalar> point(Index i) const { return points.row(i).transpose(); }
};

// Where a sample came from: segment (edge) index and local parameter in [0,1).
template <typename Scalar>
struct SampleSource {
  int segment = 0;
  Scalar param = 0;
};

template <typename Scalar>
struct SampledContour {
  PointList<Scalar> points;
  std::vector<SampleSource<Scalar>> source;

  Index size() const { return points.rows(); }
};

inline constexpr double kCentripetalAlpha = 0.5;

// Twice the signed area (shoelace). Positive means counter-clockwise in a
// y-up frame, which is the canonical orientation everywhere in this library.
template <typename Scalar>
Scalar signed_area(const PointList<Scalar>& pts) {
  Scalar a = 0;
  const Index n = pts.rows();
  for (Index i = 0; i < n; ++i) {
    const Index j = (i + 1) % n;
    a += pts(i, 0) * pts(j, 1) - pts(j, 0) * pts(i, 1);
  }
  return a / 2;
}

template <typename Scalar>
struct OrientedPoints {
  PointList<Scalar> points;
  bool reversed = false;
  bool degenerate = false;  // zero signed area; returned unchanged
};

// Reverses order (keeping the start point) iff the signed area is negative.
template <typename Scalar>
OrientedPoints<Scalar> canonicalize_orientation(const PointList<Scalar>& pts) {
  OrientedPoints<Scalar> out{pts, false, false};
  const Scalar area = signed_area(pts);
  if (area == Scalar(0)) {
    out.degenerate = true;
  } else if (area < 0) {
    out.reversed = true;
    const Index n = pts.rows();
    for (Index i = 1; i < n; ++i) out.points.row(i) = pts.row(n - i);
  }
  return out;
}

// Inverse permutation of canonicalize_orientation's reversal.
template <typename Scalar>
PointList<Scalar> undo_reversal(const PointList<Scalar>& pts, bool reversed) {
  if (!reversed) return pts;
  PointList<Scalar> out = pts;
  const Index n = pts.rows();
  for (Index i = 1; i < n; ++i) out.row(n - i) = pts.row(i);
  return out;
}

// N points on a circle centred in the crop, diameter 70% of the crop height.
// The x radius is scaled by h/w so the circle is round in pixel space.
template <typename Scalar>
ControlCurve<Scalar> init_circle(int n, int crop_h, int crop_w, CurveKind kind = CurveKind::Spline) {
  if (n < 3) throw GeometryError("init_circle: need at least 3 control points");
  if (crop_h <= 0 || crop_w <= 0) throw GeometryError("init_circle: empty crop");
  const Scalar ry = Scalar(0.35);
  const Scalar rx = ry * Scalar(crop_h) / Scalar(crop_w);
  ControlCurve<Scalar> c;
  c.kind = kind;
  c.points.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const Scalar theta = Scalar(2 * std::numbers::pi * i / n);
    c.points(i, 0) = Scalar(0.5) + rx * std::cos(theta);
    c.points(i, 1) = Scalar(0.5) + ry * std::sin(theta);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Closure

// Control list extended for a closed spline. Row r holds cp_{r-1}: row 0 is
// cp_{-1}, rows 1..N are cp_0..cp_{N-1}, row N+1 is cp_N (= cp_0) and row N+2
// is cp_{N+1}.
template <typename Scalar>
struct ClosedControls {
  PointList<Scalar> extended;
  Index n = 0;

  Point2<Scalar> cp(Index i) const { return extended.row(i + 1).transpose(); }
};

template <typename Scalar>
void require_distinct_neighbors(const PointList<Scalar>& pts) {
  const Index n = pts.rows();
  for (Index i = 0; i < n; ++i)
    if (pts.row(i) == pts.row((i + 1) % n))
      throw GeometryError("coincident consecutive control points at index " + std::to_string(i));
}

template <typename Scalar>
ClosedControls<Scalar> close_curve(const ControlCurve<Scalar>& curve) {
  const Index n = curve.size();
  if (n < 3) throw GeometryError("close_curve: need at least 3 control points");
  require_distinct_neighbors(curve.points);
  ClosedControls<Scalar> c;
  c.n = n;
  c.extended.resize(n + 3, 2);
  c.extended.middleRows(1, n) = curve.points;
  const Point2<Scalar> p0 = curve.point(0), p1 = curve.point(1), plast = curve.point(n - 1);
  const Scalar to_next = (p1 - p0).norm(), to_prev = (plast - p0).norm();
  c.extended.row(n + 1) = p0.transpose();
  c.extended.row(n + 2) = (p0 + (to_prev / to_next) * (p1 - p0)).transpose();
  c.extended.row(0) = (p0 + (to_next / to_prev) * (plast - p0)).transpose();
  return c;
}

// Routes gradients on the extended list back onto the N control points,
// differentiating the closure points through their norm ratios.
template <typename Scalar>
PointList<Scalar> close_curve_backward(const ControlCurve<Scalar>& curve, const PointList<Scalar>& d_extended) {
  const Index n = curve.size();
  PointList<Scalar> g = d_extended.middleRows(1, n);
  g.row(0) += d_extended.row(n + 1);

  const Point2<Scalar> p0 = curve.point(0), p1 = curve.point(1), plast = curve.point(n - 1);
  // q = p0 + (|w| / |u|) u, with u = toward-point minus p0 and w the other arm.
  auto closure_grad = [&](const Point2<Scalar>& dq, const Point2<Scalar>& u, const Point2<Scalar>& w, Index iu,
                          Index iw) {
    const Scalar nu = u.norm(), nw = w.norm();
    const Scalar r = nw / nu;
    const Scalar gr = dq.dot(u);
    const Point2<Scalar> gu = r * dq - gr * nw / (nu * nu * nu) * u;
    const Point2<Scalar> gw = gr / (nw * nu) * w;
    g.row(0) += (dq - gu - gw).transpose();
    g.row(iu) += gu.transpose();
    g.row(iw) += gw.transpose();
  };
  closure_grad(d_extended.row(n + 2).transpose(), p1 - p0, plast - p0, 1, n - 1);
  closure_grad(d_extended.row(0).transpose(), plast - p0, p1 - p0, n - 1, 1);
  return g;
}

// ---------------------------------------------------------------------------
// Centripetal Catmull-Rom segment

namespace detail {

// ((b - t) X + (t - a) Y) / (b - a)
template <typename Scalar>
Point2<Scalar> knot_lerp(Scalar a, Scalar b, Scalar t, const Point2<Scalar>& X, const Point2<Scalar>& Y) {
  return ((b - t) * X + (t - a) * Y) / (b - a);
}

template <typename Scalar>
struct KnotLerpGrad {
  Point2<Scalar> dX, dY;
  Scalar da, db, dt;
};

template <typename Scalar>
KnotLerpGrad<Scalar> knot_lerp_backward(Scalar a, Scalar b, Scalar t, const Point2<Scalar>& X,
                                        const Point2<Scalar>& Y, const Point2<Scalar>& R, const Point2<Scalar>& g) {
  const Scalar span = b - a;
  return {g * ((b - t) / span), g * ((t - a) / span), g.dot(R - Y) / span, g.dot(X - R) / span,
          g.dot(Y - X) / span};
}

}  // namespace detail

// Segment between P1 and P2 with neighbours P0 and P3, evaluated at the knot
// fraction s in [0, 1]: t = t1 + s (t2 - t1).
template <typename Scalar>
struct CatmullRomSegment {
  Point2<Scalar> P0, P1, P2, P3;
  Scalar alpha = Scalar(kCentripetalAlpha);

  Point2<Scalar> eval(Scalar s) const {
    using detail::knot_lerp;
    const Scalar t0 = 0;
    const Scalar t1 = t0 + std::pow((P1 - P0).norm(), alpha);
    const Scalar d12 = std::pow((P2 - P1).norm(), alpha);
    const Scalar t2 = t1 + d12;
    const Scalar t3 = t2 + std::pow((P3 - P2).norm(), alpha);
    return eval_at(t0, t1, t2, t3, t1 + s * d12);
  }

  Point2<Scalar> eval_at(Scalar t0, Scalar t1, Scalar t2, Scalar t3, Scalar t) const {
    using detail::knot_lerp;
    const Point2<Scalar> L01 = knot_lerp(t0, t1, t, P0, P1);
    const Point2<Scalar> L12 = knot_lerp(t1, t2, t, P1, P2);
    const Point2<Scalar> L23 = knot_lerp(t2, t3, t, P2, P3);
    const Point2<Scalar> L012 = knot_lerp(t0, t2, t, L01, L12);
    const Point2<Scalar> L123 = knot_lerp(t1, t3, t, L12, L23);
    return knot_lerp(t1, t2, t, L012, L123);
  }

  // Accumulates d<g, S(s)>/dP_k into grads[k], including the knot terms.
  void backward(Scalar s, const Point2<Scalar>& g, std::array<Point2<Scalar>, 4>& grads) const {
    using detail::knot_lerp;
    using detail::knot_lerp_backward;
    const Point2<Scalar> e01 = P1 - P0, e12 = P2 - P1, e23 = P3 - P2;
    const Scalar n01 = e01.norm(), n12 = e12.norm(), n23 = e23.norm();
    const Scalar d01 = std::pow(n01, alpha), d12 = std::pow(n12, alpha), d23 = std::pow(n23, alpha);
    const Scalar t0 = 0, t1 = d01, t2 = t1 + d12, t3 = t2 + d23;
    const Scalar t = t1 + s * d12;

    const Point2<Scalar> L01 = knot_lerp(t0, t1, t, P0, P1);
    const Point2<Scalar> L12 = knot_lerp(t1, t2, t, P1, P2);
    const Point2<Scalar> L23 = knot_lerp(t2, t3, t, P2, P3);
    const Point2<Scalar> L012 = knot_lerp(t0, t2, t, L01, L12);
    const Point2<Scalar> L123 = knot_lerp(t1, t3, t, L12, L23);
    const Point2<Scalar> S = knot_lerp(t1, t2, t, L012, L123);

    Scalar gt1 = 0, gt2 = 0, gt3 = 0, gt = 0;
    const auto gS = knot_lerp_backward(t1, t2, t, L012, L123, S, g);
    gt1 += gS.da;
    gt2 += gS.db;
    gt += gS.dt;
    const auto g012 = knot_lerp_backward(t0, t2, t, L01, L12, L012, gS.dX);
    gt2 += g012.db;
    gt += g012.dt;
    const auto g123 = knot_lerp_backward(t1, t3, t, L12, L23, L123, gS.dY);
    gt1 += g123.da;
    gt3 += g123.db;
    gt += g123.dt;
    const auto g01 = knot_lerp_backward(t0, t1, t, P0, P1, L01, g012.dX);
    gt1 += g01.db;
    gt += g01.dt;
    const auto g12 = knot_lerp_backward(t1, t2, t, P1, P2, L12, Point2<Scalar>(g012.dY + g123.dX));
    gt1 += g12.da;
    gt2 += g12.db;
    gt += g12.dt;
    const auto g23 = knot_lerp_backward(t2, t3, t, P2, P3, L23, g123.dY);
    gt2 += g23.da;
    gt3 += g23.db;
    gt += g23.dt;

    grads[0] += g01.dX;
    grads[1] += g01.dY + g12.dX;
    grads[2] += g12.dY + g23.dX;
    grads[3] += g23.dY;

    // t = t1 + s d12, t3 = t2 + d23, t2 = t1 + d12, t1 = d01
    Scalar gd12 = s * gt, gd23 = 0, gd01 = 0;
    gt1 += gt;
    gt2 += gt3;
    gd23 += gt3;
    gt1 += gt2;
    gd12 += gt2;
    gd01 += gt1;

    // d = |e|^alpha
    auto chord = [&](Scalar gd, Scalar len, const Point2<Scalar>& e, int from, int to) {
      const Point2<Scalar> ge = gd * alpha * std::pow(len, alpha - 2) * e;
      grads[to] += ge;
      grads[from] -= ge;
    };
    chord(gd01, n01, e01, 0, 1);
    chord(gd12, n12, e12, 1, 2);
    chord(gd23, n23, e23, 2, 3);
  }
};

// Closed centripetal Catmull-Rom spline over a control curve.
template <typename Scalar>
class CatmullRomSpline {
 public:
  explicit CatmullRomSpline(const ControlCurve<Scalar>& curve, Scalar alpha = Scalar(kCentripetalAlpha))
      : closed_(close_curve(curve)), alpha_(alpha) {
    const Index n = closed_.n;
    knots_.resize(n + 3);
    knots_[1] = 0;  // t_0
    for (Index r = 2; r < n + 3; ++r)
      knots_[r] = knots_[r - 1] + std::pow((closed_.extended.row(r) - closed_.extended.row(r - 1)).norm(), alpha_);
    knots_[0] = -std::pow((closed_.extended.row(1) - closed_.extended.row(0)).norm(), alpha_);
  }

  Index segment_count() const { return closed_.n; }
  const ClosedControls<Scalar>& controls() const { return closed_; }
  Scalar alpha() const { return alpha_; }

  // Knot t_i for i in [-1, N+1].
  Scalar knot(Index i) const { return knots_[i + 1]; }

  CatmullRomSegment<Scalar> segment(Index i) const {
    const auto& e = closed_.extended;
    return {e.row(i).transpose(), e.row(i + 1).transpose(), e.row(i + 2).transpose(), e.row(i + 3).transpose(),
            alpha_};
  }

  // Evaluates segment i (between cp_i and cp_{i+1}) at global knot value t.
  Point2<Scalar> eval(Index i, Scalar t) const {
    return segment(i).eval_at(knot(i - 1), knot(i), knot(i + 1), knot(i + 2), t);
  }

 private:
  ClosedControls<Scalar> closed_;
  Scalar alpha_;
  std::vector<Scalar> knots_;
};

// Samples per segment: K / N each, remainder to the first segments.
inline std::vector<int> samples_per_segment(Index n, int k) {
  std::vector<int> counts(n, static_cast<int>(k / n));
  for (Index i = 0; i < k % n; ++i) ++counts[i];
  return counts;
}

template <typename Scalar>
SampledContour<Scalar> crs_sample(const ControlCurve<Scalar>& curve, int k) {
  if (k < 1) throw GeometryError("crs_sample: need at least one sample");
  const CatmullRomSpline<Scalar> spline(curve);
  const auto counts = samples_per_segment(spline.segment_count(), k);
  SampledContour<Scalar> out;
  out.points.resize(k, 2);
  out.source.reserve(k);
  Index row = 0;
  for (Index i = 0; i < spline.segment_count(); ++i) {
    const auto seg = spline.segment(i);
    for (int m = 0; m < counts[i]; ++m) {
      const Scalar s = Scalar(m) / Scalar(counts[i]);
      out.points.row(row++) = seg.eval(s).transpose();
      out.source.push_back({static_cast<int>(i), s});
    }
  }
  return out;
}

template <typename Scalar>
PointList<Scalar> crs_sample_backward(const ControlCurve<Scalar>& curve, const SampledContour<Scalar>& samples,
                                      const PointList<Scalar>& d_samples) {
  if (d_samples.rows() != samples.size()) throw ShapeError("crs_sample_backward: gradient length mismatch");
  const CatmullRomSpline<Scalar> spline(curve);
  PointList<Scalar> d_ext = PointList<Scalar>::Zero(spline.controls().extended.rows(), 2);
  for (Index r = 0; r < samples.size(); ++r) {
    const auto& src = samples.source[r];
    std::array<Point2<Scalar>, 4> g{Point2<Scalar>::Zero(), Point2<Scalar>::Zero(), Point2<Scalar>::Zero(),
                                    Point2<Scalar>::Zero()};
    spline.segment(src.segment).backward(src.param, d_samples.row(r).transpose(), g);
    for (int k = 0; k < 4; ++k) d_ext.row(src.segment + k) += g[k].transpose();
  }
  return close_curve_backward(curve, d_ext);
}

// ---------------------------------------------------------------------------
// Polygon: K samples at equal arc length along the closed polyline, from cp_0.

template <typename Scalar>
SampledContour<Scalar> polygon_sample(const ControlCurve<Scalar>& curve, int k) {
  const Index n = curve.size();
  if (n < 2) throw GeometryError("polygon_sample: need at least 2 vertices");
  if (k < 1) throw GeometryError("polygon_sample: need at least one sample");
  std::vector<Scalar> len(n), start(n + 1, Scalar(0));
  for (Index e = 0; e < n; ++e) {
    len[e] = (curve.point((e + 1) % n) - curve.point(e)).norm();
    start[e + 1] = start[e] + len[e];
  }
  const Scalar perimeter = start[n];
  if (!(perimeter > Scalar(0))) throw GeometryError("polygon_sample: zero perimeter");

  SampledContour<Scalar> out;
  out.points.resize(k, 2);
  out.source.reserve(k);
  Index e = 0;
  for (int j = 0; j < k; ++j) {
    const Scalar pos = perimeter * Scalar(j) / Scalar(k);
    while (e + 1 < n && (pos >= start[e + 1] || len[e] == Scalar(0))) ++e;
    const Scalar u = (pos - start[e]) / len[e];
    out.points.row(j) = (curve.point(e) + u * (curve.point((e + 1) % n) - curve.point(e))).transpose();
    out.source.push_back({static_cast<int>(e), u});
  }
  return out;
}

// Exact derivative including the arc-length reparametrization (sample
// positions move with edge lengths and the perimeter).
template <typename Scalar>
PointList<Scalar> polygon_sample_backward(const ControlCurve<Scalar>& curve, const SampledContour<Scalar>& samples,
                                          const PointList<Scalar>& d_samples) {
  const Index n = curve.size();
  const Index k = samples.size();
  if (d_samples.rows() != k) throw ShapeError("polygon_sample_backward: gradient length mismatch");
  std::vector<Scalar> len(n);
  std::vector<Point2<Scalar>> edge(n);
  for (Index e = 0; e < n; ++e) {
    edge[e] = curve.point((e + 1) % n) - curve.point(e);
    len[e] = edge[e].norm();
  }
  PointList<Scalar> g = PointList<Scalar>::Zero(n, 2);
  std::vector<Scalar> g_len(n, Scalar(0)), g_start(n, Scalar(0));
  Scalar g_perimeter = 0;
  for (Index j = 0; j < k; ++j) {
    const auto [e, u] = samples.source[j];
    const Point2<Scalar> gp = d_samples.row(j).transpose();
    g.row(e) += ((1 - u) * gp).transpose();
    g.row((e + 1) % n) += (u * gp).transpose();
    const Scalar gu = gp.dot(edge[e]);
    g_perimeter += gu * (Scalar(j) / Scalar(k)) / len[e];
    g_start[e] -= gu / len[e];
    g_len[e] -= gu * u / len[e];
  }
  Scalar suffix = 0;  // start[e] = sum of len[m] for m < e
  for (Index m = n - 1; m >= 0; --m) {
    g_len[m] += suffix + g_perimeter;
    suffix += g_start[m];
  }
  for (Index m = 0; m < n; ++m) {
    if (len[m] == Scalar(0)) continue;
    const Point2<Scalar> gd = g_len[m] * edge[m] / len[m];
    g.row((m + 1) % n) += gd.transpose();
    g.row(m) -= gd.transpose();
  }
  return g;
}

template <typename Scalar>
SampledContour<Scalar> sample_curve(const ControlCurve<Scalar>& curve, int k) {
  return curve.kind == CurveKind::Spline ? crs_sample(curve, k) : polygon_sample(curve, k);
}

template <typename Scalar>
PointList<Scalar> sample_curve_backward(const ControlCurve<Scalar>& curve, const SampledContour<Scalar>& samples,
                                        const PointList<Scalar>& d_samples) {
  return curve.kind == CurveKind::Spline ? crs_sample_backward(curve, samples, d_samples)
                                         : polygon_sample_backward(curve, samples, d_samples);
}

// Nudges exact duplicates of the previous point by multiples of 1e-6 so the
// spline is defined. A nudge can create a new duplicate further along (or at
// index 0 via the wrap-around), so passes repeat until none remain.
// Returns true if anything moved.
template <typename Scalar>
bool separate_coincident(PointList<Scalar>& pts) {
  bool moved = false;
  const Index n = pts.rows();
  for (Index pass = 1; pass <= n + 1; ++pass) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index j = (i + 1) % n;
      if (pts.row(i) == pts.row(j)) {
        const Scalar step = Scalar(1e-6) * Scalar(pass);
        pts(j, 0) += pts(j, 0) > Scalar(0.5) ? -step : step;
        changed = true;
      }
    }
    if (!changed) break;
    moved = true;
  }
  return moved;
}

}  // namespace curvegcn
