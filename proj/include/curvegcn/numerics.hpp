#pragma once

// Dense math primitives with hand-wired backward passes. Everything is
// templated on the scalar type; the model instantiates `Real`.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "curvegcn/errors.hpp"

namespace curvegcn {

#ifdef CURVEGCN_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const std::string& what) {
  if (!all_finite(x)) throw NumericError("non-finite values in " + what);
}

// Generic n-d tensor: row-major data plus shape. Used for storage and
// serialization; compute paths view the data as Eigen matrices.
template <typename Scalar>
struct Tensor {
  std::vector<Index> shape;
  Vector<Scalar> data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> extents) : shape(std::move(extents)) {
    data = Vector<Scalar>::Zero(element_count(shape));
  }
  Tensor(std::vector<Index> extents, Vector<Scalar> values) : shape(std::move(extents)), data(std::move(values)) {
    if (data.size() != element_count(shape)) throw ShapeError("tensor data length does not match shape");
  }

  static Index element_count(const std::vector<Index>& extents) {
    return std::accumulate(extents.begin(), extents.end(), Index{1}, std::multiplies<>());
  }
  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
};

// C x H x W feature map. Storage is a C x (H*W) matrix; column y*W + x.
template <typename Scalar>
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<Scalar> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix<Scalar>::Zero(c, Index{h} * w)) {}

  static FeatureMap from(int c, int h, int w, Matrix<Scalar> values) {
    if (values.rows() != c || values.cols() != Index{h} * w) throw ShapeError("feature map data has wrong extents");
    FeatureMap f;
    f.channels = c;
    f.height = h;
    f.width = w;
    f.data = std::move(values);
    return f;
  }

  bool empty() const { return channels == 0 || height == 0 || width == 0; }
  Scalar& at(int c, int y, int x) { return data(c, Index{y} * width + x); }
  Scalar at(int c, int y, int x) const { return data(c, Index{y} * width + x); }
};

// ---------------------------------------------------------------------------
// linear: y = x W + b

template <typename Scalar>
struct LinearGrads {
  Matrix<Scalar> dx;
  Matrix<Scalar> dW;
  RowVector<Scalar> db;
};

template <typename Scalar>
Matrix<Scalar> linear(const Matrix<Scalar>& x, const Matrix<Scalar>& W, const RowVector<Scalar>& b) {
  if (x.cols() != W.rows() || b.size() != W.cols()) throw ShapeError("linear: inner dimensions disagree");
  Matrix<Scalar> y = x * W;
  y.rowwise() += b;
  return y;
}

template <typename Scalar>
LinearGrads<Scalar> linear_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& W, const Matrix<Scalar>& dy) {
  if (x.cols() != W.rows() || dy.cols() != W.cols() || dy.rows() != x.rows())
    throw ShapeError("linear_backward: shapes disagree");
  return {dy * W.transpose(), x.transpose() * dy, dy.colwise().sum()};
}

// ---------------------------------------------------------------------------
// elementwise activations

template <typename Scalar>
Matrix<Scalar> relu(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

// Gradient at exactly 0 is 0.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
  return (x.array() > Scalar(0)).select(dy, Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

// Takes the forward *output*.
template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& dy) {
  return (dy.array() * y.array() * (Scalar(1) - y.array())).matrix();
}

template <typename Scalar>
Matrix<Scalar> tanh(const Matrix<Scalar>& x) {
  return x.array().tanh().matrix();
}

// Takes the forward *output*.
template <typename Scalar>
Matrix<Scalar> tanh_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& dy) {
  return (dy.array() * (Scalar(1) - y.array().square())).matrix();
}

// ---------------------------------------------------------------------------
// Bilinear sampling on the pixel-center grid. Unit coordinates: (0,0) is the
// top-left corner of the map, (1,1) the bottom-right; pixel j has its center
// at (j + 0.5) / extent. Coordinates are clamped to the border.

template <typename Scalar>
struct BilinearTap {
  std::array<Index, 4> column{};  // data columns of the 4 neighbors
  std::array<Scalar, 4> weight{};
  std::array<Scalar, 4> dweight_dx{};  // d weight / d unit-x
  std::array<Scalar, 4> dweight_dy{};
};

namespace detail {

// Returns lower index, fraction and d(fraction)/d(unit coordinate).
template <typename Scalar>
void bilinear_axis(Scalar unit, int extent, int& lo, Scalar& frac, Scalar& dfrac) {
  dfrac = Scalar(extent);
  if (unit < Scalar(0) || unit > Scalar(1)) dfrac = 0;
  unit = std::clamp(unit, Scalar(0), Scalar(1));
  Scalar p = unit * Scalar(extent) - Scalar(0.5);
  if (extent == 1) {
    lo = 0;
    frac = 0;
    dfrac = 0;
    return;
  }
  if (p < Scalar(0) || p > Scalar(extent - 1)) {
    dfrac = 0;
    p = std::clamp(p, Scalar(0), Scalar(extent - 1));
  }
  lo = std::min(static_cast<int>(std::floor(p)), extent - 2);
  frac = p - Scalar(lo);
}

}  // namespace detail

template <typename Scalar>
BilinearTap<Scalar> bilinear_tap(int height, int width, Scalar x, Scalar y) {
  if (height <= 0 || width <= 0) throw ShapeError("bilinear_sample: empty feature map");
  int x0, y0;
  Scalar fx, fy, dfx, dfy;
  detail::bilinear_axis(x, width, x0, fx, dfx);
  detail::bilinear_axis(y, height, y0, fy, dfy);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  BilinearTap<Scalar> tap;
  tap.column = {Index{y0} * width + x0, Index{y0} * width + x1, Index{y1} * width + x0, Index{y1} * width + x1};
  tap.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  tap.dweight_dx = {-(1 - fy) * dfx, (1 - fy) * dfx, -fy * dfx, fy * dfx};
  tap.dweight_dy = {-(1 - fx) * dfy, -fx * dfy, (1 - fx) * dfy, fx * dfy};
  return tap;
}

template <typename Scalar>
Vector<Scalar> bilinear_sample(const FeatureMap<Scalar>& F, const BilinearTap<Scalar>& tap) {
  Vector<Scalar> v = F.data.col(tap.column[0]) * tap.weight[0];
  for (int k = 1; k < 4; ++k) v += F.data.col(tap.column[k]) * tap.weight[k];
  return v;
}

template <typename Scalar>
Vector<Scalar> bilinear_sample(const FeatureMap<Scalar>& F, Scalar x, Scalar y) {
  if (F.empty()) throw ShapeError("bilinear_sample: empty feature map");
  return bilinear_sample(F, bilinear_tap(F.height, F.width, x, y));
}

// Scatters dv into dF with the forward weights.
template <typename Scalar, typename Derived>
void bilinear_backward(FeatureMap<Scalar>& dF, const BilinearTap<Scalar>& tap, const Eigen::MatrixBase<Derived>& dv) {
  for (int k = 0; k < 4; ++k) dF.data.col(tap.column[k]) += dv * tap.weight[k];
}

// Gradient of <dv, sample> with respect to the unit coordinates.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 2, 1> bilinear_coord_grad(const FeatureMap<Scalar>& F, const BilinearTap<Scalar>& tap,
                                                const Eigen::MatrixBase<Derived>& dv) {
  Eigen::Matrix<Scalar, 2, 1> g = Eigen::Matrix<Scalar, 2, 1>::Zero();
  for (int k = 0; k < 4; ++k) {
    const Scalar proj = dv.dot(F.data.col(tap.column[k]));
    g.x() += proj * tap.dweight_dx[k];
    g.y() += proj * tap.dweight_dy[k];
  }
  return g;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation). Kernels are stored O x (C*k*k), row-major over
// (c, ky, kx), which is the flattening of an O x C x k x k tensor.

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

template <typename Scalar>
Matrix<Scalar> im2col(const FeatureMap<Scalar>& x, const ConvSpec& spec) {
  const int k = spec.kernel;
  const int ho = spec.out_extent(x.height), wo = spec.out_extent(x.width);
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(Index{x.channels} * k * k, Index{ho} * wo);
  for (int c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Index row = (Index{c} * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= x.width) continue;
            cols(row, Index{oy} * wo + ox) = x.at(c, iy, ix);
          }
        }
      }
  return cols;
}

template <typename Scalar>
FeatureMap<Scalar> col2im(const Matrix<Scalar>& cols, int channels, int height, int width, const ConvSpec& spec) {
  const int k = spec.kernel;
  const int ho = spec.out_extent(height), wo = spec.out_extent(width);
  FeatureMap<Scalar> x(channels, height, width);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Index row = (Index{c} * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= width) continue;
            x.at(c, iy, ix) += cols(row, Index{oy} * wo + ox);
          }
        }
      }
  return x;
}

template <typename Scalar>
void check_conv_shapes(const FeatureMap<Scalar>& x, const Matrix<Scalar>& kernels, const ConvSpec& spec) {
  if (spec.kernel % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (kernels.cols() != Index{x.channels} * spec.kernel * spec.kernel)
    throw ShapeError("conv2d: kernel/input channel mismatch");
  if (spec.out_extent(x.height) <= 0 || spec.out_extent(x.width) <= 0) throw ShapeError("conv2d: empty output");
}

template <typename Scalar>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& x, const Matrix<Scalar>& kernels, const RowVector<Scalar>& bias,
                          const ConvSpec& spec) {
  check_conv_shapes(x, kernels, spec);
  if (bias.size() != 0 && bias.size() != kernels.rows()) throw ShapeError("conv2d: bias length mismatch");
  Matrix<Scalar> y = kernels * im2col(x, spec);
  if (bias.size() != 0) y.colwise() += bias.transpose();
  return FeatureMap<Scalar>::from(static_cast<int>(kernels.rows()), spec.out_extent(x.height), spec.out_extent(x.width),
                                  std::move(y));
}

template <typename Scalar>
struct Conv2dGrads {
  FeatureMap<Scalar> dx;
  Matrix<Scalar> dkernels;
  RowVector<Scalar> dbias;
};

template <typename Scalar>
Conv2dGrads<Scalar> conv2d_backward(const FeatureMap<Scalar>& x, const Matrix<Scalar>& kernels, const ConvSpec& spec,
                                    const FeatureMap<Scalar>& dy, bool need_dx = true) {
  check_conv_shapes(x, kernels, spec);
  if (dy.channels != kernels.rows() || dy.height != spec.out_extent(x.height) || dy.width != spec.out_extent(x.width))
    throw ShapeError("conv2d_backward: upstream gradient has wrong shape");
  Conv2dGrads<Scalar> g;
  g.dkernels = dy.data * im2col(x, spec).transpose();
  g.dbias = dy.data.rowwise().sum().transpose();
  if (need_dx) g.dx = col2im<Scalar>(kernels.transpose() * dy.data, x.channels, x.height, x.width, spec);
  return g;
}

// ---------------------------------------------------------------------------
// Binary cross entropy, mean over elements. Predictions are clamped to
// [eps, 1 - eps]; the clamped region has zero gradient.

inline constexpr double kBceEpsilon = 1e-7;

template <typename Scalar>
void check_bce_target(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("bce: shape mismatch");
  if (!((target.array() == Scalar(0)) || (target.array() == Scalar(1))).all())
    throw Error("bce: target values must be 0 or 1");
}

template <typename Scalar>
Scalar bce(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  check_bce_target(pred, target);
  const Scalar eps = Scalar(kBceEpsilon);
  Scalar total = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar p = std::clamp(pred(i), eps, Scalar(1) - eps);
    const Scalar t = target(i);
    total -= t * std::log(p) + (1 - t) * std::log(1 - p);
  }
  return total / Scalar(pred.size());
}

template <typename Scalar>
Matrix<Scalar> bce_backward(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  check_bce_target(pred, target);
  const Scalar eps = Scalar(kBceEpsilon);
  const Scalar n = Scalar(pred.size());
  Matrix<Scalar> d(pred.rows(), pred.cols());
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar p = pred(i);
    d(i) = (p < eps || p > 1 - eps) ? Scalar(0) : (p - target(i)) / (p * (1 - p)) / n;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Parameters and Adam

template <typename Scalar>
struct Parameter {
  std::string name;
  std::vector<Index> shape;  // logical shape; value is stored as a 2-d view
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> first_moment;
  Matrix<Scalar> second_moment;
};

template <typename Scalar>
class ParamStore {
 public:
  std::size_t add(std::string name, std::vector<Index> shape, Matrix<Scalar> value) {
    if (Tensor<Scalar>::element_count(shape) != value.size()) throw ShapeError("parameter " + name + ": shape mismatch");
    if (find(name) != npos) throw Error("duplicate parameter " + name);
    Parameter<Scalar> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    p.first_moment = p.grad;
    p.second_moment = p.grad;
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return npos;
  }

  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  const Matrix<Scalar>& value(std::size_t i) const { return params_[i].value; }
  Matrix<Scalar>& grad(std::size_t i) { return params_[i].grad; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::int64_t step_count() const { return steps_; }
  void set_step_count(std::int64_t s) { steps_ = s; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  // Fresh Adam moments and step count.
  void reset_optimizer() {
    for (auto& p : params_) {
      p.first_moment.setZero();
      p.second_moment.setZero();
    }
    steps_ = 0;
  }

  Scalar grad_norm() const {
    Scalar s = 0;
    for (const auto& p : params_) s += p.grad.squaredNorm();
    return std::sqrt(s);
  }

  void scale_grad(Scalar factor) {
    for (auto& p : params_) p.grad *= factor;
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::int64_t steps_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update over every parameter; gradients are zeroed.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, Scalar lr, const AdamConfig& cfg = {}) {
  for (const auto& p : store)
    if (!all_finite(p.grad)) throw NumericError("adam_step: non-finite gradient in " + p.name);
  store.set_step_count(store.step_count() + 1);
  const auto t = static_cast<Scalar>(store.step_count());
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2), eps = Scalar(cfg.epsilon);
  const Scalar c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
  for (auto& p : store) {
    p.first_moment = b1 * p.first_moment + (1 - b1) * p.grad;
    p.second_moment = b2 * p.second_moment + (1 - b2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (p.first_moment.array() / c1) / ((p.second_moment.array() / c2).sqrt() + eps);
    p.grad.setZero();
  }
}

// init * factor^floor(epoch / every); epochs are 0-based.
inline double step_decay_lr(double init, double factor, int every, int epoch) {
  if (every <= 0) return init;
  return init * std::pow(factor, epoch / every);
}

}  // namespace curvegcn
