#include "curvegcn/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "curvegcn/geometry.hpp"
#include "curvegcn/losses.hpp"
#include "curvegcn/random.hpp"

namespace curvegcn {

double relative_error(const Vector<double>& a, const Vector<double>& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

Vector<double> numeric_gradient(const std::function<double(const Vector<double>&)>& f, const Vector<double>& x,
                                double h) {
  Vector<double> g(x.size());
  Vector<double> p = x;
  for (Index i = 0; i < x.size(); ++i) {
    p(i) = x(i) + h;
    const double up = f(p);
    p(i) = x(i) - h;
    const double down = f(p);
    p(i) = x(i);
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

namespace {

using Mat = Matrix<double>;
using Vec = Vector<double>;

Mat random_matrix(Rng& rng, Index r, Index c, double lo = -1, double hi = 1) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(lo, hi);
  return m;
}

int random_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(std::uint64_t(hi - lo + 1))); }

// Packs a list of matrices into one flat vector and back.
struct Packer {
  std::vector<std::pair<Index, Index>> shapes;

  Vec pack(const std::vector<Mat>& ms) {
    shapes.clear();
    Index n = 0;
    for (const auto& m : ms) {
      shapes.emplace_back(m.rows(), m.cols());
      n += m.size();
    }
    Vec v(n);
    Index o = 0;
    for (const auto& m : ms) {
      for (Index i = 0; i < m.size(); ++i) v(o + i) = m(i);
      o += m.size();
    }
    return v;
  }

  std::vector<Mat> unpack(const Vec& v) const {
    std::vector<Mat> ms;
    Index o = 0;
    for (const auto& [r, c] : shapes) {
      Mat m(r, c);
      for (Index i = 0; i < m.size(); ++i) m(i) = v(o + i);
      o += m.size();
      ms.push_back(std::move(m));
    }
    return ms;
  }
};

// A case returns its relative error, or a negative value when the random
// draw landed too close to a kink and was skipped.
using Case = std::function<double(Rng&, double h)>;

double check(const Packer& pk, const Vec& x, const std::function<double(const std::vector<Mat>&)>& loss,
             const Vec& analytic, double h) {
  const auto f = [&](const Vec& v) { return loss(pk.unpack(v)); };
  return relative_error(analytic, numeric_gradient(f, x, h));
}

double linear_case(Rng& rng, double h) {
  const Index b = random_int(rng, 1, 4), in = random_int(rng, 1, 5), out = random_int(rng, 1, 5);
  Packer pk;
  const Vec x = pk.pack({random_matrix(rng, b, in), random_matrix(rng, in, out), random_matrix(rng, 1, out)});
  const Mat r = random_matrix(rng, b, out);
  const auto loss = [&](const std::vector<Mat>& m) {
    return r.cwiseProduct(linear<double>(m[0], m[1], m[2].row(0))).sum();
  };
  const auto ms = pk.unpack(x);
  const auto g = linear_backward<double>(ms[0], ms[1], r);
  return check(pk, x, loss, Packer(pk).pack({g.dx, g.dW, Mat(g.db)}), h);
}

template <typename Fwd, typename Bwd>
double elementwise_case(Rng& rng, double h, Fwd fwd, Bwd bwd, bool avoid_zero) {
  const Index n = random_int(rng, 1, 20);
  Mat v = random_matrix(rng, 1, n, -3, 3);
  if (avoid_zero)
    for (Index i = 0; i < n; ++i)
      if (std::abs(v(i)) < 1e-3) v(i) = 0.5;
  Packer pk;
  const Vec x = pk.pack({v});
  const Mat r = random_matrix(rng, 1, n);
  const auto loss = [&](const std::vector<Mat>& m) { return r.cwiseProduct(fwd(m[0])).sum(); };
  return check(pk, x, loss, Packer(pk).pack({bwd(v, fwd(v), r)}), h);
}

// Keeps p = u * extent - 0.5 away from integer grid lines and the clamp region.
double safe_unit(Rng& rng, int extent) {
  for (;;) {
    const double p = rng.uniform(0.0, double(extent - 1));
    const double frac = p - std::floor(p);
    if (frac > 0.01 && frac < 0.99) return (p + 0.5) / extent;
  }
}

double bilinear_case(Rng& rng, double h) {
  const int c = random_int(rng, 1, 3), hh = random_int(rng, 2, 6), ww = random_int(rng, 2, 6);
  const Mat data = random_matrix(rng, c, Index{hh} * ww);
  const Mat uv{{safe_unit(rng, ww), safe_unit(rng, hh)}};
  Packer pk;
  const Vec x = pk.pack({data, uv});
  const Vec r = random_matrix(rng, c, 1).col(0);
  const auto loss = [&](const std::vector<Mat>& m) {
    const auto F = FeatureMap<double>::from(c, hh, ww, m[0]);
    return r.dot(bilinear_sample(F, m[1](0, 0), m[1](0, 1)));
  };
  const auto F = FeatureMap<double>::from(c, hh, ww, data);
  const auto tap = bilinear_tap(hh, ww, uv(0, 0), uv(0, 1));
  FeatureMap<double> dF(c, hh, ww);
  bilinear_backward(dF, tap, r);
  const auto dc = bilinear_coord_grad(F, tap, r);
  return check(pk, x, loss, Packer(pk).pack({dF.data, Mat{{dc.x(), dc.y()}}}), h);
}

double conv_case(Rng& rng, double h) {
  const int out = random_int(rng, 1, 3);
  ConvSpec spec;
  spec.stride = random_int(rng, 1, 2);
  const Mat input = random_matrix(rng, 1, 25);
  const Mat kernels = random_matrix(rng, out, 9);
  const Mat bias = random_matrix(rng, 1, out);
  const Index cells = Index{spec.out_extent(5)} * spec.out_extent(5);
  const Mat r = random_matrix(rng, out, cells);
  Packer pk;
  const Vec x = pk.pack({input, kernels, bias});
  const auto loss = [&](const std::vector<Mat>& m) {
    const auto y = conv2d(FeatureMap<double>::from(1, 5, 5, m[0]), m[1], RowVector<double>(m[2].row(0)), spec);
    return r.cwiseProduct(y.data).sum();
  };
  const auto in = FeatureMap<double>::from(1, 5, 5, input);
  const auto dy = FeatureMap<double>::from(out, spec.out_extent(5), spec.out_extent(5), r);
  const auto g = conv2d_backward(in, kernels, spec, dy, true);
  return check(pk, x, loss, Packer(pk).pack({g.dx.data, g.dkernels, Mat(g.dbias)}), h);
}

double bce_case(Rng& rng, double h) {
  const Index n = random_int(rng, 1, 12);
  const Mat p = random_matrix(rng, 1, n, 0.05, 0.95);
  Mat t(1, n);
  for (Index i = 0; i < n; ++i) t(i) = double(rng.below(2));
  Packer pk;
  const Vec x = pk.pack({p});
  const auto loss = [&](const std::vector<Mat>& m) { return bce(m[0], t); };
  return check(pk, x, loss, Packer(pk).pack({bce_backward(p, t)}), h);
}

PointList<double> random_star(Rng& rng, int n) {
  PointList<double> p(n, 2);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / n;
    const double r = rng.uniform(0.15, 0.4);
    p(i, 0) = 0.5 + r * std::cos(a);
    p(i, 1) = 0.5 + r * std::sin(a);
  }
  return p;
}

Mat as_row(const PointList<double>& p) { return Mat(p); }

double close_curve_case(Rng& rng, double h) {
  const int n = random_int(rng, 3, 8);
  const PointList<double> cp = random_star(rng, n);
  const Mat r = random_matrix(rng, n + 3, 2);
  Packer pk;
  const Vec x = pk.pack({as_row(cp)});
  const auto loss = [&](const std::vector<Mat>& m) {
    return r.cwiseProduct(close_curve(ControlCurve<double>{m[0], CurveKind::Spline}).extended).sum();
  };
  const PointList<double> g = close_curve_backward(ControlCurve<double>{cp, CurveKind::Spline}, PointList<double>(r));
  return check(pk, x, loss, Packer(pk).pack({as_row(g)}), h);
}

double sampler_case(Rng& rng, double h, CurveKind kind) {
  const int n = random_int(rng, 3, 10);
  const int k = random_int(rng, n, 4 * n);
  const ControlCurve<double> curve{random_star(rng, n), kind};
  const auto s = sample_curve(curve, k);
  if (kind == CurveKind::Polygon)
    for (Index i = 1; i < s.size(); ++i)
      if (s.source[i].param < 1e-3 || s.source[i].param > 1 - 1e-3) return -1;
  const PointList<double> r = random_matrix(rng, k, 2);
  Packer pk;
  const Vec x = pk.pack({as_row(curve.points)});
  const auto loss = [&](const std::vector<Mat>& m) {
    return r.cwiseProduct(sample_curve(ControlCurve<double>{m[0], kind}, k).points).sum();
  };
  return check(pk, x, loss, Packer(pk).pack({as_row(sample_curve_backward(curve, s, r))}), h);
}

// Matching loss through the spline sampler; skipped when the argmin offset or
// any L1 sign is close to switching.
double matching_case(Rng& rng, double h) {
  const int n = random_int(rng, 3, 8);
  const int k = random_int(rng, n, 3 * n);
  const ControlCurve<double> curve{random_star(rng, n), CurveKind::Spline};
  const PointList<double> gt = polygon_sample(ControlCurve<double>{random_star(rng, n), CurveKind::Polygon}, k).points;
  const auto s = crs_sample(curve, k);
  const auto m = matching_loss(s.points, gt);
  for (Index j = 0; j < k; ++j) {
    if (j == m.offset) continue;
    double total = 0;
    for (Index i = 0; i < k; ++i) total += detail::l1_term(s.points, i, gt, (j + i) % k);
    if (total - m.loss < 1e-3) return -1;
  }
  for (Index i = 0; i < k; ++i)
    for (int a = 0; a < 2; ++a)
      if (std::abs(s.points(i, a) - gt((m.offset + i) % k, a)) < 1e-3) return -1;
  Packer pk;
  const Vec x = pk.pack({as_row(curve.points)});
  const auto loss = [&](const std::vector<Mat>& ms) {
    return matching_loss(crs_sample(ControlCurve<double>{ms[0], CurveKind::Spline}, k).points, gt).loss;
  };
  return check(pk, x, loss, Packer(pk).pack({as_row(crs_sample_backward(curve, s, m.grad))}), h);
}

GradcheckResult run_one(const std::string& name, double tol, const Case& c, const GradcheckOptions& opt,
                        std::uint64_t stream) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckResult res{name, 0, 0.0, tol, 0.0};
  Rng rng(mix_seed(opt.seed, stream));
  int attempts = 0;
  while (res.cases < opt.cases && attempts < 100 * opt.cases) {
    ++attempts;
    const double e = c(rng, opt.step);
    if (e < 0) continue;
    res.max_rel_error = std::max(res.max_rel_error, std::isnan(e) ? INFINITY : e);
    ++res.cases;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  const auto relu_f = [](const Mat& v) { return relu(v); };
  const auto relu_b = [](const Mat& v, const Mat&, const Mat& r) { return relu_backward(v, r); };
  const auto sig_f = [](const Mat& v) { return sigmoid(v); };
  const auto sig_b = [](const Mat&, const Mat& y, const Mat& r) { return sigmoid_backward(y, r); };
  const auto tanh_f = [](const Mat& v) { return tanh(v); };
  const auto tanh_b = [](const Mat&, const Mat& y, const Mat& r) { return tanh_backward(y, r); };

  std::vector<GradcheckResult> out;
  out.push_back(run_one("linear", kPrimitiveTolerance, linear_case, opt, 1));
  out.push_back(run_one("relu", kPrimitiveTolerance,
                        [&](Rng& r, double h) { return elementwise_case(r, h, relu_f, relu_b, true); }, opt, 2));
  out.push_back(run_one("sigmoid", kPrimitiveTolerance,
                        [&](Rng& r, double h) { return elementwise_case(r, h, sig_f, sig_b, false); }, opt, 3));
  out.push_back(run_one("tanh", kPrimitiveTolerance,
                        [&](Rng& r, double h) { return elementwise_case(r, h, tanh_f, tanh_b, false); }, opt, 4));
  out.push_back(run_one("bilinear_sample", kPrimitiveTolerance, bilinear_case, opt, 5));
  out.push_back(run_one("conv2d", kPrimitiveTolerance, conv_case, opt, 6));
  out.push_back(run_one("bce", kPrimitiveTolerance, bce_case, opt, 7));
  out.push_back(run_one("close_curve", kSamplerTolerance, close_curve_case, opt, 8));
  out.push_back(run_one("crs_sample", kSamplerTolerance,
                        [](Rng& r, double h) { return sampler_case(r, h, CurveKind::Spline); }, opt, 9));
  out.push_back(run_one("polygon_sample", kSamplerTolerance,
                        [](Rng& r, double h) { return sampler_case(r, h, CurveKind::Polygon); }, opt, 10));
  out.push_back(run_one("matching_loss(crs_sample)", kSamplerTolerance, matching_case, opt, 11));
  return out;
}

}  // namespace curvegcn
