#pragma once

// Curve-GCN predictor: conv feature backbone with edge/vertex branches,
// bilinear node features, Graph-ResNet stacks (one per inference iteration)
// and a bounded offset head.

#include <json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "curvegcn/geometry.hpp"
#include "curvegcn/numerics.hpp"
#include "curvegcn/random.hpp"

namespace curvegcn {

struct ModelConfig {
  int control_points = 40;
  int samples = 1280;
  CurveKind curve_kind = CurveKind::Spline;
  int iterations = 3;
  int input_size = 112;
  std::vector<int> backbone_channels{8, 16, 32, 32};
  int branch_channels = 16;
  bool boundary_branches = true;
  int hidden = 128;
  int resnet_blocks = 6;
  double max_offset = 0.25;
  int interactive_radius = 2;

  // Two stride-2 layers: the feature grid is a quarter of the input size.
  int feature_grid() const { return input_size / 4; }
  int feature_channels() const { return backbone_channels.back() + (boundary_branches ? 2 : 0); }
  int node_input_width() const { return feature_channels() + 2; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// ---------------------------------------------------------------------------
// Graph

// Node i is connected to (i - 2), (i - 1), (i + 1), (i + 2) modulo N.
struct GraphTopology {
  int nodes = 0;
  std::vector<std::array<int, 4>> neighbors;

  static GraphTopology ring(int n);
  // Row i of the result is the sum of f over the neighbours of i.
  Matrix<Real> aggregate(const Matrix<Real>& f) const;
};

// y = f W_self + (A f) W_neigh + b
class GraphConv {
 public:
  GraphConv() = default;
  GraphConv(ParamStore<Real>& store, const std::string& name, int in, int out, Rng& rng);

  Matrix<Real> forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f) const;
  // Accumulates weight gradients; returns d f.
  Matrix<Real> backward(ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f,
                        const Matrix<Real>& dy) const;

  std::size_t self_weight = 0, neighbor_weight = 0, bias = 0;
};

struct ResBlockCache {
  Matrix<Real> input, pre_a, hidden, pre_b;
};

// r = ReLU(conv_a(f)); f' = ReLU(conv_b(r) + f)
class GraphResBlock {
 public:
  GraphResBlock() = default;
  GraphResBlock(ParamStore<Real>& store, const std::string& name, int width, Rng& rng);

  Matrix<Real> forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f,
                       ResBlockCache* cache = nullptr) const;
  Matrix<Real> backward(ParamStore<Real>& store, const GraphTopology& g, const ResBlockCache& cache,
                        const Matrix<Real>& dy) const;

  GraphConv conv_a, conv_b;
};

struct GcnCache {
  Matrix<Real> input, pre_in, trunk, pre_out, out, head;  // trunk feeds the output layer; head = tanh output
  std::vector<ResBlockCache> blocks;
};

// Input graph layer, residual blocks, output graph layer, FC offset head.
class Gcn {
 public:
  Gcn() = default;
  Gcn(ParamStore<Real>& store, const std::string& prefix, int input_width, const ModelConfig& cfg, Rng& rng);

  // N x 2 offsets bounded by +-max_offset.
  Matrix<Real> forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f0,
                       GcnCache* cache = nullptr) const;
  Matrix<Real> backward(ParamStore<Real>& store, const GraphTopology& g, const GcnCache& cache,
                        const Matrix<Real>& d_offsets) const;

  GraphConv input_layer;
  std::vector<GraphResBlock> blocks;
  GraphConv output_layer;
  std::size_t head_weight = 0, head_bias = 0;
  Real max_offset = Real(0.25);
};

// ---------------------------------------------------------------------------
// Backbone

struct ConvLayer {
  std::size_t kernels = 0, bias = 0;
  ConvSpec spec;
};

struct BranchCache {
  FeatureMap<Real> hidden_pre, hidden;
  Matrix<Real> probability;  // 1 x G^2
};

struct BackboneOutput {
  FeatureMap<Real> features;  // concat(F_c, edge, vertex) when branches are on
  std::vector<FeatureMap<Real>> conv_inputs, conv_pre;
  BranchCache edge, vertex;

  const Matrix<Real>& edge_probability() const { return edge.probability; }
  const Matrix<Real>& vertex_probability() const { return vertex.probability; }
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore<Real>& store, const ModelConfig& cfg, Rng& rng);

  BackboneOutput forward(const ParamStore<Real>& store, const FeatureMap<Real>& image) const;
  // dF: gradient on the concatenated features; d_edge / d_vertex: extra
  // gradients on the branch probabilities (e.g. from BCE). Either may be empty.
  void backward(ParamStore<Real>& store, const BackboneOutput& out, const FeatureMap<Real>& dF,
                const Matrix<Real>& d_edge, const Matrix<Real>& d_vertex) const;

  std::vector<ConvLayer> layers;
  ConvLayer edge_conv, edge_fc, vertex_conv, vertex_fc;
  bool branches = true;
  int input_channels = 3;
};

// ---------------------------------------------------------------------------
// Node features

struct NodeFeatures {
  Matrix<Real> features;  // N x (C + 2 [+ 2])
  std::vector<BilinearTap<Real>> taps;
  PointList<Real> coords;  // clamped sampling positions
};

// f_i = concat(F(x_i, y_i), x_i, y_i) with coordinates clamped to [0, 1].
NodeFeatures node_input_features(const FeatureMap<Real>& F, const PointList<Real>& coords, int extra_columns = 0);

// Accumulates into dF and d_coords.
void node_input_features_backward(const FeatureMap<Real>& F, const NodeFeatures& nf, const Matrix<Real>& d_features,
                                  FeatureMap<Real>& dF, PointList<Real>& d_coords);

// ---------------------------------------------------------------------------

struct CurvePrediction {
  std::vector<ControlCurve<Real>> curves;  // initialization first

  const ControlCurve<Real>& final_curve() const { return curves.back(); }
};

struct StepCache {
  NodeFeatures nodes;
  GcnCache gcn;
  PointList<Real> unclamped;  // curve + offsets before clamping
};

struct ForwardPass {
  BackboneOutput backbone;
  std::vector<StepCache> steps;
  CurvePrediction prediction;
};

class CurveGcn {
 public:
  CurveGcn() = default;
  CurveGcn(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }
  const GraphTopology& topology() const { return topology_; }

  // image: 3 x input_size x input_size, values roughly in [-0.5, 0.5].
  BackboneOutput extract_features(const FeatureMap<Real>& image) const;

  ControlCurve<Real> initial_curve() const;

  // One offset prediction with the GCN of the given iteration.
  ControlCurve<Real> predict_step(const FeatureMap<Real>& F, const ControlCurve<Real>& curve, int iteration,
                                  StepCache* cache = nullptr) const;

  // iterations < 0 uses the configured count.
  CurvePrediction iterative_inference(const FeatureMap<Real>& image, int iterations = -1) const;
  CurvePrediction iterative_inference_from(const FeatureMap<Real>& F, int iterations = -1) const;

  ForwardPass forward(const FeatureMap<Real>& image) const;
  // d_curves[t]: gradient on the curve produced by iteration t (may be empty).
  void backward(const ForwardPass& pass, const std::vector<PointList<Real>>& d_curves, const Matrix<Real>& d_edge,
                const Matrix<Real>& d_vertex);

 private:
  ModelConfig cfg_;
  ParamStore<Real> store_;
  Backbone backbone_;
  std::vector<Gcn> gcns_;
  GraphTopology topology_;
};

}  // namespace curvegcn
