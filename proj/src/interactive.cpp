#include "curvegcn/interactive.hpp"

#include <algorithm>
#include <cmath>

#include "curvegcn/losses.hpp"

namespace curvegcn {

NodeFeatures correction_features(const FeatureMap<Real>& F, const ControlCurve<Real>& curve, const Correction& corr) {
  if (corr.node < 0 || corr.node >= curve.size()) throw Error("correction: node index out of range");
  PointList<Real> moved = curve.points;
  moved.row(corr.node) = corr.target.transpose();
  NodeFeatures nf = node_input_features(F, moved, 2);
  nf.features(corr.node, F.channels + 2) = corr.shift.x();
  nf.features(corr.node, F.channels + 3) = corr.shift.y();
  return nf;
}

std::vector<int> influence_set(int nodes, int node, int radius) {
  std::vector<int> out;
  for (int d = 1; d <= radius; ++d)
    for (int s : {-d, d}) {
      const int j = ((node + s) % nodes + nodes) % nodes;
      if (j != node && std::find(out.begin(), out.end(), j) == out.end()) out.push_back(j);
    }
  std::sort(out.begin(), out.end());
  return out;
}

InteractiveGcn::InteractiveGcn(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  gcn_ = Gcn(store_, "interactive", cfg_.node_input_width() + 2, cfg_, rng);
  topology_ = GraphTopology::ring(cfg_.control_points);
}

ControlCurve<Real> InteractiveGcn::masked_predict(const FeatureMap<Real>& F, const ControlCurve<Real>& curve,
                                                  const Correction& corr, InteractiveCache* cache) const {
  if (curve.size() != cfg_.control_points) throw ShapeError("masked_predict: control point count mismatch");
  if (F.channels != cfg_.feature_channels()) throw ShapeError("masked_predict: feature channel mismatch");
  InteractiveCache local;
  InteractiveCache& c = cache ? *cache : local;
  c.node = corr.node;
  c.nodes = correction_features(F, curve, corr);
  c.pinned = curve;
  c.pinned.points.row(corr.node) = corr.target.transpose();
  c.moved = influence_set(cfg_.control_points, corr.node, radius());

  ControlCurve<Real> out = c.pinned;
  if (c.moved.empty()) return out;
  const Matrix<Real> offsets = gcn_.forward(store_, topology_, c.nodes.features, cache ? &c.gcn : nullptr);
  c.unclamped = c.pinned.points;
  for (int j : c.moved) {
    c.unclamped.row(j) += offsets.row(j);
    out.points.row(j) = c.unclamped.row(j).cwiseMax(Real(0)).cwiseMin(Real(1));
  }
  // Keep the spline defined without touching nodes outside the influence set.
  const Index n = out.size();
  for (int pass = 1; pass <= n + 1; ++pass) {
    bool changed = false;
    for (int j : c.moved) {
      const auto prev = out.points.row((j + n - 1) % n), next = out.points.row((j + 1) % n);
      if (out.points.row(j) == prev || out.points.row(j) == next) {
        const Real step = Real(1e-6) * Real(pass);
        out.points(j, 0) += out.points(j, 0) > Real(0.5) ? -step : step;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return out;
}

PointList<Real> InteractiveGcn::backward(const FeatureMap<Real>& F, const InteractiveCache& cache,
                                         const PointList<Real>& d_out) {
  const Index n = cfg_.control_points;
  PointList<Real> d_pinned = d_out;
  if (cache.moved.empty()) {
    d_pinned.row(cache.node).setZero();
    return d_pinned;
  }
  Matrix<Real> d_offsets = Matrix<Real>::Zero(n, 2);
  for (int j : cache.moved)
    for (int a = 0; a < 2; ++a) {
      const Real u = cache.unclamped(j, a);
      if (u < Real(0) || u > Real(1)) d_pinned(j, a) = 0;
      d_offsets(j, a) = d_pinned(j, a);
    }
  const Matrix<Real> d_f0 = gcn_.backward(store_, topology_, cache.gcn, d_offsets);
  FeatureMap<Real> scratch(F.channels, F.height, F.width);
  node_input_features_backward(F, cache.nodes, d_f0, scratch, d_pinned);
  // The pinned row is the annotator's target; the old position only enters
  // through the shift slots (shift = target - old).
  d_pinned.row(cache.node) = -d_f0.row(cache.node).segment(F.channels + 2, 2);
  return d_pinned;
}

// ---------------------------------------------------------------------------

PointList<Real> resample_gt(const PointList<double>& unit_polygon, int n) {
  ControlCurve<double> gt{unit_polygon, CurveKind::Polygon};
  return polygon_sample(gt, n).points.cast<Real>();
}

Correction simulate_worst_point(const ControlCurve<Real>& pred, const PointList<Real>& gt_points,
                                const std::vector<int>& excluded) {
  const Index n = pred.size();
  if (gt_points.rows() != n) throw ShapeError("simulate_worst_point: GT resampling must have N points");
  const auto match = matching_loss(pred.points, gt_points);
  Correction c;
  Real worst = -1;
  for (Index i = 0; i < n; ++i) {
    if (std::find(excluded.begin(), excluded.end(), static_cast<int>(i)) != excluded.end()) continue;
    const Index m = (match.offset + i) % n;
    const Real d = detail::l1_term(pred.points, i, gt_points, m);
    if (d > worst) {
      worst = d;
      c.node = static_cast<int>(i);
      c.target = gt_points.row(m).transpose();
    }
  }
  if (worst < 0) throw Error("simulate_worst_point: every node is excluded");
  c.shift = c.target - pred.point(c.node);
  return c;
}

CorrectionStep pin_only_step() {
  return [](const ControlCurve<Real>& curve, const Correction& corr) {
    ControlCurve<Real> out = curve;
    out.points.row(corr.node) = corr.target.transpose();
    return out;
  };
}

CorrectionStep model_step(const InteractiveGcn& model, FeatureMap<Real> F) {
  return [&model, F = std::move(F)](const ControlCurve<Real>& curve, const Correction& corr) {
    return model.masked_predict(F, curve, corr);
  };
}

Mask curve_mask(const ControlCurve<Real>& curve, int samples, int height, int width) {
  try {
    if (curve.kind == CurveKind::Polygon) return rasterize_polygon(curve.points, height, width);
    return rasterize_polygon(sample_curve(curve, samples).points, height, width);
  } catch (const GeometryError&) {
    return Mask(height, width);
  }
}

AnnotationTrace annotate_until(const ControlCurve<Real>& initial, const PointList<double>& gt_unit_polygon,
                               const Mask& gt_mask, const CorrectionStep& step, const AnnotateOptions& opt) {
  const PointList<Real> gt_points = resample_gt(gt_unit_polygon, static_cast<int>(initial.size()));
  AnnotationTrace t;
  t.curve = initial;
  double current = iou(curve_mask(initial, opt.samples, gt_mask.height, gt_mask.width), gt_mask);
  t.iou.push_back(current);
  int stalled = 0;
  std::vector<int> rejected;
  while (current <= opt.threshold && t.clicks < opt.max_clicks && stalled < opt.stall_clicks) {
    if (rejected.size() >= static_cast<std::size_t>(initial.size())) break;
    const Correction corr = simulate_worst_point(t.curve, gt_points, rejected);
    if (corr.zero_shift()) break;
    ++t.clicks;
    ControlCurve<Real> next = step(t.curve, corr);
    const double score = iou(curve_mask(next, opt.samples, gt_mask.height, gt_mask.width), gt_mask);
    if (score > current + opt.min_gain) {
      stalled = 0;
    } else {
      ++stalled;
    }
    if (score >= current) {
      t.curve = std::move(next);
      current = score;
      rejected.clear();
    } else {
      rejected.push_back(corr.node);
    }
    t.iou.push_back(current);
  }
  t.reached = current > opt.threshold;
  return t;
}

}  // namespace curvegcn
