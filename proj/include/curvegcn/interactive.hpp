#pragma once

// Human-in-the-loop refinement: a separately trained GCN that moves the
// neighbours of a corrected control point, a simulated annotator, and the
// click-until-threshold protocol.

#include <cstdint>
#include <functional>
#include <vector>

#include "curvegcn/model.hpp"
#include "curvegcn/raster.hpp"

namespace curvegcn {

struct Correction {
  int node = 0;
  Point2<Real> target = Point2<Real>::Zero();  // new position, unit coordinates
  Point2<Real> shift = Point2<Real>::Zero();   // target - old position

  bool zero_shift() const { return shift.x() == Real(0) && shift.y() == Real(0); }
};

// Node input features with the control point moved to its corrected position
// and (dx, dy) appended: the shift on the corrected node, zeros elsewhere.
NodeFeatures correction_features(const FeatureMap<Real>& F, const ControlCurve<Real>& curve, const Correction& corr);

// Nodes whose positions masked_predict may change (excluding the pinned node).
std::vector<int> influence_set(int nodes, int node, int radius);

struct InteractiveCache {
  ControlCurve<Real> pinned;  // input curve with the corrected node replaced
  NodeFeatures nodes;
  GcnCache gcn;
  PointList<Real> unclamped;
  std::vector<int> moved;
  int node = 0;
};

class InteractiveGcn {
 public:
  InteractiveGcn() = default;
  InteractiveGcn(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int radius() const { return cfg_.interactive_radius; }
  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }

  // Corrected node pinned to corr.target; nodes within `radius` ring steps
  // move by the predicted offsets (clamped to [0, 1]); all others are copied.
  ControlCurve<Real> masked_predict(const FeatureMap<Real>& F, const ControlCurve<Real>& curve, const Correction& corr,
                                    InteractiveCache* cache = nullptr) const;

  // Accumulates weight gradients; returns d loss / d input curve. F is frozen.
  PointList<Real> backward(const FeatureMap<Real>& F, const InteractiveCache& cache, const PointList<Real>& d_out);

 private:
  ModelConfig cfg_;
  ParamStore<Real> store_;
  Gcn gcn_;
  GraphTopology topology_;
};

// N points at equal arc length along the GT polygon (unit coordinates).
PointList<Real> resample_gt(const PointList<double>& unit_polygon, int n);

// Align pred with the GT resampling by the best cyclic offset, pick the node
// with the largest Manhattan error (lowest index on ties) and move it onto
// its matched GT point.
Correction simulate_worst_point(const ControlCurve<Real>& pred, const PointList<Real>& gt_points,
                                const std::vector<int>& excluded = {});

// Curve update for one click: either the interactive model or the no-model
// baseline that only pins the corrected node.
using CorrectionStep = std::function<ControlCurve<Real>(const ControlCurve<Real>&, const Correction&)>;

CorrectionStep pin_only_step();
// The step keeps its own copy of F; the model must outlive it.
CorrectionStep model_step(const InteractiveGcn& model, FeatureMap<Real> F);

struct AnnotationTrace {
  ControlCurve<Real> curve;
  int clicks = 0;
  std::vector<double> iou;  // iou[0]: automatic prediction; iou[c]: after c clicks
  bool reached = false;     // final IoU > threshold
};

struct AnnotateOptions {
  double threshold = 0.85;
  int max_clicks = 20;
  int samples = 1280;  // contour samples used to rasterize the curve
  double min_gain = 1e-4;
  int stall_clicks = 2;
};

// Prediction mask of a control curve at the GT resolution: polygons are
// filled directly, splines through `samples` contour points.
Mask curve_mask(const ControlCurve<Real>& curve, int samples, int height, int width);

// Simulated annotation session. A click whose result lowers the IoU is
// undone (it still counts), and that node is skipped until a click succeeds.
AnnotationTrace annotate_until(const ControlCurve<Real>& initial, const PointList<double>& gt_unit_polygon,
                               const Mask& gt_mask, const CorrectionStep& step, const AnnotateOptions& opt);

}  // namespace curvegcn
