#pragma once

#include <cmath>
#include <limits>

#include "curvegcn/geometry.hpp"
#include "curvegcn/raster.hpp"

namespace curvegcn {

template <typename Scalar>
struct MatchResult {
  Scalar loss = 0;
  int offset = 0;          // best cyclic offset j*: pred[i] <-> gt[(j* + i) % K]
  PointList<Scalar> grad;  // d loss / d pred (L1 sign vector at j*)
};

namespace detail {

template <typename Scalar>
Scalar l1_term(const PointList<Scalar>& p, Index i, const PointList<Scalar>& q, Index j) {
  return std::abs(p(i, 0) - q(j, 0)) + std::abs(p(i, 1) - q(j, 1));
}

template <typename Scalar>
Scalar sign(Scalar v) {
  return Scalar((v > 0) - (v < 0));
}

}  // namespace detail

// min over j of sum_i |pred_i - gt_{(j+i) % K}|_1, exact over all K offsets.
// The offset that best aligns pred_0 is evaluated first to get a tight bound;
// every other offset is abandoned once its running sum exceeds the best total
// (the running sum is non-decreasing, so this never changes the minimizer).
// Ties go to the smallest offset.
template <typename Scalar>
MatchResult<Scalar> matching_loss(const PointList<Scalar>& pred, const PointList<Scalar>& gt) {
  const Index k = pred.rows();
  if (gt.rows() != k) throw ShapeError("matching_loss: point counts differ");
  if (k == 0) throw ShapeError("matching_loss: empty point sets");
  const auto offset_total = [&](Index j, Scalar bound) {
    Scalar total = 0;
    for (Index i = 0; i < k; ++i) {
      total += detail::l1_term(pred, i, gt, (j + i) % k);
      if (total > bound) return std::numeric_limits<Scalar>::infinity();
    }
    return total;
  };
  Index seed = 0;
  for (Index j = 1; j < k; ++j)
    if (detail::l1_term(pred, 0, gt, j) < detail::l1_term(pred, 0, gt, seed)) seed = j;

  MatchResult<Scalar> r;
  r.loss = offset_total(seed, std::numeric_limits<Scalar>::infinity());
  r.offset = static_cast<int>(seed);
  for (Index j = 0; j < k; ++j) {
    if (j == seed) continue;
    const Scalar total = offset_total(j, r.loss);
    if (total < r.loss || (total == r.loss && j < r.offset)) {
      r.loss = total;
      r.offset = static_cast<int>(j);
    }
  }
  r.grad.resize(k, 2);
  for (Index i = 0; i < k; ++i) {
    const Index m = (r.offset + i) % k;
    r.grad(i, 0) = detail::sign(pred(i, 0) - gt(m, 0));
    r.grad(i, 1) = detail::sign(pred(i, 1) - gt(m, 1));
  }
  return r;
}

// Direct O(K^2) evaluation of the same formula.
template <typename Scalar>
Scalar matching_loss_naive(const PointList<Scalar>& pred, const PointList<Scalar>& gt) {
  const Index k = pred.rows();
  if (gt.rows() != k) throw ShapeError("matching_loss_naive: point counts differ");
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Index j = 0; j < k; ++j) {
    Scalar total = 0;
    for (Index i = 0; i < k; ++i) total += detail::l1_term(pred, i, gt, (j + i) % k);
    best = std::min(best, total);
  }
  return best;
}

template <typename Scalar>
struct RenderLossResult {
  Scalar loss = 0;         // pixel count of |M - M_gt|
  PointList<Scalar> grad;  // d loss / d contour points (unit coordinates)
  Mask rendered;
};

// L1 between the rendered contour and the target mask, with the fan-shift
// gradient on the contour points. The contour is oriented counter-clockwise
// first so interior fan coverage is positive.
template <typename Scalar>
RenderLossResult<Scalar> render_loss(const PointList<Scalar>& contour, const Mask& target) {
  const auto oriented = canonicalize_orientation(contour);
  RenderLossResult<Scalar> r;
  r.rendered = render(oriented.points, target.height, target.width);
  r.loss = Scalar(l1_distance(r.rendered, target));
  r.grad = undo_reversal(render_backward(oriented.points, r.rendered, target), oriented.reversed);
  return r;
}

}  // namespace curvegcn
