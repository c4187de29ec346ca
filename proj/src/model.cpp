#include "curvegcn/model.hpp"

#include <algorithm>
#include <cmath>

namespace curvegcn {

void ModelConfig::validate() const {
  if (control_points < 3) throw Error("model: control_points must be at least 3");
  if (samples < control_points) throw Error("model: samples must be at least control_points");
  if (iterations < 1) throw Error("model: iterations must be positive");
  if (input_size < 8 || input_size % 4 != 0) throw Error("model: input_size must be a positive multiple of 4");
  if (backbone_channels.size() < 2) throw Error("model: backbone needs at least two layers");
  for (int c : backbone_channels)
    if (c < 1) throw Error("model: backbone channel counts must be positive");
  if (boundary_branches && branch_channels < 1) throw Error("model: branch_channels must be positive");
  if (hidden < 1 || resnet_blocks < 0) throw Error("model: bad GCN width or depth");
  if (!(max_offset > 0)) throw Error("model: max_offset must be positive");
  if (interactive_radius < 0) throw Error("model: interactive_radius must be non-negative");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"control_points", c.control_points},
                     {"samples", c.samples},
                     {"curve_kind", to_string(c.curve_kind)},
                     {"iterations", c.iterations},
                     {"input_size", c.input_size},
                     {"backbone_channels", c.backbone_channels},
                     {"branch_channels", c.branch_channels},
                     {"boundary_branches", c.boundary_branches},
                     {"hidden", c.hidden},
                     {"resnet_blocks", c.resnet_blocks},
                     {"max_offset", c.max_offset},
                     {"interactive_radius", c.interactive_radius}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.control_points = j.value("control_points", d.control_points);
  c.samples = j.value("samples", d.samples);
  c.curve_kind = curve_kind_from_string(j.value("curve_kind", std::string(to_string(d.curve_kind))));
  c.iterations = j.value("iterations", d.iterations);
  c.input_size = j.value("input_size", d.input_size);
  c.backbone_channels = j.value("backbone_channels", d.backbone_channels);
  c.branch_channels = j.value("branch_channels", d.branch_channels);
  c.boundary_branches = j.value("boundary_branches", d.boundary_branches);
  c.hidden = j.value("hidden", d.hidden);
  c.resnet_blocks = j.value("resnet_blocks", d.resnet_blocks);
  c.max_offset = j.value("max_offset", d.max_offset);
  c.interactive_radius = j.value("interactive_radius", d.interactive_radius);
}

namespace {

Matrix<Real> glorot(Index rows, Index cols, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix<Real> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = Real(rng.uniform(-limit, limit));
  return m;
}

RowVector<Real> row(const Matrix<Real>& m) { return RowVector<Real>(Eigen::Map<const RowVector<Real>>(m.data(), m.size())); }

ConvLayer make_conv(ParamStore<Real>& store, const std::string& name, int in, int out, ConvSpec spec, Rng& rng) {
  const int kk = spec.kernel * spec.kernel;
  ConvLayer l;
  l.spec = spec;
  l.kernels = store.add(name + ".weight", {out, in, spec.kernel, spec.kernel},
                        glorot(out, Index{in} * kk, double(in) * kk, double(out) * kk, rng));
  l.bias = store.add(name + ".bias", {out}, Matrix<Real>::Zero(1, out));
  return l;
}

FeatureMap<Real> conv_forward(const ParamStore<Real>& store, const ConvLayer& l, const FeatureMap<Real>& x) {
  return conv2d(x, store.value(l.kernels), row(store.value(l.bias)), l.spec);
}

FeatureMap<Real> conv_backward(ParamStore<Real>& store, const ConvLayer& l, const FeatureMap<Real>& x,
                               const FeatureMap<Real>& dy, bool need_dx) {
  auto g = conv2d_backward(x, store.value(l.kernels), l.spec, dy, need_dx);
  store.grad(l.kernels) += g.dkernels;
  store.grad(l.bias) += g.dbias;
  return std::move(g.dx);
}

FeatureMap<Real> relu_map(const FeatureMap<Real>& x) { return FeatureMap<Real>::from(x.channels, x.height, x.width, relu(x.data)); }

FeatureMap<Real> relu_map_backward(const FeatureMap<Real>& pre, const FeatureMap<Real>& dy) {
  return FeatureMap<Real>::from(pre.channels, pre.height, pre.width, relu_backward(pre.data, dy.data));
}

}  // namespace

// ---------------------------------------------------------------------------

GraphTopology GraphTopology::ring(int n) {
  if (n < 1) throw ShapeError("GraphTopology: need at least one node");
  GraphTopology g;
  g.nodes = n;
  g.neighbors.resize(n);
  const auto wrap = [n](int i) { return ((i % n) + n) % n; };
  for (int i = 0; i < n; ++i) g.neighbors[i] = {wrap(i - 2), wrap(i - 1), wrap(i + 1), wrap(i + 2)};
  return g;
}

Matrix<Real> GraphTopology::aggregate(const Matrix<Real>& f) const {
  if (f.rows() != nodes) throw ShapeError("GraphTopology: feature rows do not match node count");
  Matrix<Real> out = Matrix<Real>::Zero(f.rows(), f.cols());
  for (int i = 0; i < nodes; ++i)
    for (int j : neighbors[i]) out.row(i) += f.row(j);
  return out;
}

GraphConv::GraphConv(ParamStore<Real>& store, const std::string& name, int in, int out, Rng& rng) {
  // Neighbouring nodes carry nearly identical features, so the four-neighbour
  // sum behaves like one input scaled by four. Initialise as if the layer saw
  // two inputs (self and neighbour mean).
  self_weight = store.add(name + ".self", {in, out}, glorot(in, out, 2.0 * in, out, rng));
  neighbor_weight = store.add(name + ".neighbor", {in, out},
                              Matrix<Real>(glorot(in, out, 2.0 * in, out, rng) / Real(4)));
  bias = store.add(name + ".bias", {out}, Matrix<Real>::Zero(1, out));
}

Matrix<Real> GraphConv::forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f) const {
  Matrix<Real> y = f * store.value(self_weight) + g.aggregate(f) * store.value(neighbor_weight);
  y.rowwise() += row(store.value(bias));
  return y;
}

Matrix<Real> GraphConv::backward(ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f,
                                 const Matrix<Real>& dy) const {
  store.grad(self_weight) += f.transpose() * dy;
  store.grad(neighbor_weight) += g.aggregate(f).transpose() * dy;
  store.grad(bias) += dy.colwise().sum();
  // The neighbourhood relation is symmetric, so A^T = A.
  return dy * store.value(self_weight).transpose() + g.aggregate(dy * store.value(neighbor_weight).transpose());
}

GraphResBlock::GraphResBlock(ParamStore<Real>& store, const std::string& name, int width, Rng& rng)
    : conv_a(store, name + ".a", width, width, rng), conv_b(store, name + ".b", width, width, rng) {}

Matrix<Real> GraphResBlock::forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f,
                                    ResBlockCache* cache) const {
  Matrix<Real> pre_a = conv_a.forward(store, g, f);
  Matrix<Real> hidden = relu(pre_a);
  Matrix<Real> pre_b = conv_b.forward(store, g, hidden) + f;
  Matrix<Real> out = relu(pre_b);
  if (cache) *cache = {f, std::move(pre_a), std::move(hidden), std::move(pre_b)};
  return out;
}

Matrix<Real> GraphResBlock::backward(ParamStore<Real>& store, const GraphTopology& g, const ResBlockCache& cache,
                                     const Matrix<Real>& dy) const {
  const Matrix<Real> d_pre_b = relu_backward(cache.pre_b, dy);
  const Matrix<Real> d_hidden = conv_b.backward(store, g, cache.hidden, d_pre_b);
  const Matrix<Real> d_pre_a = relu_backward(cache.pre_a, d_hidden);
  return d_pre_b + conv_a.backward(store, g, cache.input, d_pre_a);
}

Gcn::Gcn(ParamStore<Real>& store, const std::string& prefix, int input_width, const ModelConfig& cfg, Rng& rng)
    : input_layer(store, prefix + ".input", input_width, cfg.hidden, rng),
      max_offset(Real(cfg.max_offset)) {
  for (int b = 0; b < cfg.resnet_blocks; ++b)
    blocks.emplace_back(store, prefix + ".block" + std::to_string(b), cfg.hidden, rng);
  output_layer = GraphConv(store, prefix + ".output", cfg.hidden, cfg.hidden, rng);
  head_weight = store.add(prefix + ".head.weight", {cfg.hidden, 2}, glorot(cfg.hidden, 2, cfg.hidden, 2, rng));
  head_bias = store.add(prefix + ".head.bias", {2}, Matrix<Real>::Zero(1, 2));
}

Matrix<Real> Gcn::forward(const ParamStore<Real>& store, const GraphTopology& g, const Matrix<Real>& f0,
                          GcnCache* cache) const {
  GcnCache local;
  GcnCache& c = cache ? *cache : local;
  c.input = f0;
  c.pre_in = input_layer.forward(store, g, f0);
  Matrix<Real> h = relu(c.pre_in);
  c.blocks.assign(blocks.size(), {});
  for (std::size_t b = 0; b < blocks.size(); ++b) h = blocks[b].forward(store, g, h, cache ? &c.blocks[b] : nullptr);
  c.trunk = std::move(h);
  c.pre_out = output_layer.forward(store, g, c.trunk);
  c.out = relu(c.pre_out);
  c.head = tanh(linear(c.out, store.value(head_weight), row(store.value(head_bias))));
  return max_offset * c.head;
}

Matrix<Real> Gcn::backward(ParamStore<Real>& store, const GraphTopology& g, const GcnCache& cache,
                           const Matrix<Real>& d_offsets) const {
  const Matrix<Real> dz = tanh_backward(cache.head, Matrix<Real>(max_offset * d_offsets));
  auto lin = linear_backward(cache.out, store.value(head_weight), dz);
  store.grad(head_weight) += lin.dW;
  store.grad(head_bias) += lin.db;
  Matrix<Real> dh = output_layer.backward(store, g, cache.trunk, relu_backward(cache.pre_out, lin.dx));
  for (std::size_t b = blocks.size(); b-- > 0;) dh = blocks[b].backward(store, g, cache.blocks[b], dh);
  return input_layer.backward(store, g, cache.input, relu_backward(cache.pre_in, dh));
}

// ---------------------------------------------------------------------------

Backbone::Backbone(ParamStore<Real>& store, const ModelConfig& cfg, Rng& rng)
    : branches(cfg.boundary_branches) {
  int in = input_channels;
  for (std::size_t l = 0; l < cfg.backbone_channels.size(); ++l) {
    ConvSpec spec;
    spec.stride = l < 2 ? 2 : 1;
    layers.push_back(make_conv(store, "backbone.conv" + std::to_string(l), in, cfg.backbone_channels[l], spec, rng));
    in = cfg.backbone_channels[l];
  }
  if (branches) {
    ConvSpec pointwise;
    pointwise.kernel = 1;
    pointwise.padding = 0;
    edge_conv = make_conv(store, "edge.conv", in, cfg.branch_channels, {}, rng);
    edge_fc = make_conv(store, "edge.fc", cfg.branch_channels, 1, pointwise, rng);
    vertex_conv = make_conv(store, "vertex.conv", in, cfg.branch_channels, {}, rng);
    vertex_fc = make_conv(store, "vertex.fc", cfg.branch_channels, 1, pointwise, rng);
  }
}

namespace {

BranchCache branch_forward(const ParamStore<Real>& store, const ConvLayer& conv, const ConvLayer& fc,
                           const FeatureMap<Real>& fc_in) {
  BranchCache b;
  b.hidden_pre = conv_forward(store, conv, fc_in);
  b.hidden = relu_map(b.hidden_pre);
  b.probability = sigmoid(conv_forward(store, fc, b.hidden).data);
  return b;
}

void branch_backward(ParamStore<Real>& store, const ConvLayer& conv, const ConvLayer& fc, const BranchCache& b,
                     const FeatureMap<Real>& fc_in, const Matrix<Real>& d_prob, FeatureMap<Real>& d_in) {
  const auto& h = b.hidden;
  const auto d_logit = FeatureMap<Real>::from(1, h.height, h.width, sigmoid_backward(b.probability, d_prob));
  const auto d_hidden = conv_backward(store, fc, h, d_logit, true);
  d_in.data += conv_backward(store, conv, fc_in, relu_map_backward(b.hidden_pre, d_hidden), true).data;
}

}  // namespace

BackboneOutput Backbone::forward(const ParamStore<Real>& store, const FeatureMap<Real>& image) const {
  if (image.channels != input_channels) throw ShapeError("backbone: expected a 3-channel image");
  BackboneOutput out;
  FeatureMap<Real> x = image;
  for (const auto& l : layers) {
    out.conv_inputs.push_back(x);
    out.conv_pre.push_back(conv_forward(store, l, x));
    x = relu_map(out.conv_pre.back());
  }
  if (!branches) {
    out.features = std::move(x);
    return out;
  }
  out.edge = branch_forward(store, edge_conv, edge_fc, x);
  out.vertex = branch_forward(store, vertex_conv, vertex_fc, x);
  out.features = FeatureMap<Real>(x.channels + 2, x.height, x.width);
  out.features.data.topRows(x.channels) = x.data;
  out.features.data.row(x.channels) = out.edge.probability;
  out.features.data.row(x.channels + 1) = out.vertex.probability;
  return out;
}

void Backbone::backward(ParamStore<Real>& store, const BackboneOutput& out, const FeatureMap<Real>& dF,
                        const Matrix<Real>& d_edge, const Matrix<Real>& d_vertex) const {
  const FeatureMap<Real>& last = out.conv_pre.back();
  const int c = last.channels;
  FeatureMap<Real> dx(c, last.height, last.width);
  if (dF.data.size() != 0) dx.data = dF.data.topRows(c);
  if (branches) {
    const Index cells = Index{last.height} * last.width;
    Matrix<Real> de = Matrix<Real>::Zero(1, cells), dv = Matrix<Real>::Zero(1, cells);
    if (dF.data.size() != 0) {
      de += dF.data.row(c);
      dv += dF.data.row(c + 1);
    }
    if (d_edge.size() != 0) de += d_edge;
    if (d_vertex.size() != 0) dv += d_vertex;
    const FeatureMap<Real> fc_in = relu_map(last);
    branch_backward(store, edge_conv, edge_fc, out.edge, fc_in, de, dx);
    branch_backward(store, vertex_conv, vertex_fc, out.vertex, fc_in, dv, dx);
  }
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto d_pre = relu_map_backward(out.conv_pre[l], dx);
    dx = conv_backward(store, layers[l], out.conv_inputs[l], d_pre, l > 0);
  }
}

// ---------------------------------------------------------------------------

NodeFeatures node_input_features(const FeatureMap<Real>& F, const PointList<Real>& coords, int extra_columns) {
  const Index n = coords.rows();
  NodeFeatures nf;
  nf.coords = coords.cwiseMax(Real(0)).cwiseMin(Real(1));
  nf.features = Matrix<Real>::Zero(n, F.channels + 2 + extra_columns);
  nf.taps.reserve(n);
  for (Index i = 0; i < n; ++i) {
    nf.taps.push_back(bilinear_tap(F.height, F.width, coords(i, 0), coords(i, 1)));
    nf.features.row(i).head(F.channels) = bilinear_sample(F, nf.taps.back()).transpose();
    nf.features(i, F.channels) = nf.coords(i, 0);
    nf.features(i, F.channels + 1) = nf.coords(i, 1);
  }
  return nf;
}

void node_input_features_backward(const FeatureMap<Real>& F, const NodeFeatures& nf, const Matrix<Real>& d_features,
                                  FeatureMap<Real>& dF, PointList<Real>& d_coords) {
  const Index n = nf.coords.rows();
  for (Index i = 0; i < n; ++i) {
    const auto dv = d_features.row(i).head(F.channels).transpose();
    bilinear_backward(dF, nf.taps[i], dv);
    // The tap derivatives are already zero outside [0, 1].
    const auto g = bilinear_coord_grad(F, nf.taps[i], dv);
    d_coords(i, 0) += g.x();
    d_coords(i, 1) += g.y();
    for (int a = 0; a < 2; ++a) {
      const Real v = nf.coords(i, a);
      if (v > Real(0) && v < Real(1)) d_coords(i, a) += d_features(i, F.channels + a);
    }
  }
}

// ---------------------------------------------------------------------------

CurveGcn::CurveGcn(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  backbone_ = Backbone(store_, cfg_, rng);
  for (int t = 0; t < cfg_.iterations; ++t)
    gcns_.emplace_back(store_, "gcn" + std::to_string(t), cfg_.node_input_width(), cfg_, rng);
  topology_ = GraphTopology::ring(cfg_.control_points);
}

BackboneOutput CurveGcn::extract_features(const FeatureMap<Real>& image) const {
  if (image.height != cfg_.input_size || image.width != cfg_.input_size)
    throw ShapeError("model: image must be " + std::to_string(cfg_.input_size) + " pixels square");
  return backbone_.forward(store_, image);
}

ControlCurve<Real> CurveGcn::initial_curve() const {
  return init_circle<Real>(cfg_.control_points, cfg_.input_size, cfg_.input_size, cfg_.curve_kind);
}

ControlCurve<Real> CurveGcn::predict_step(const FeatureMap<Real>& F, const ControlCurve<Real>& curve, int iteration,
                                          StepCache* cache) const {
  if (iteration < 0 || iteration >= static_cast<int>(gcns_.size())) throw Error("model: iteration out of range");
  if (curve.size() != cfg_.control_points) throw ShapeError("model: control point count mismatch");
  StepCache local;
  StepCache& c = cache ? *cache : local;
  c.nodes = node_input_features(F, curve.points);
  const Matrix<Real> offsets = gcns_[iteration].forward(store_, topology_, c.nodes.features, cache ? &c.gcn : nullptr);
  c.unclamped = curve.points + offsets;
  ControlCurve<Real> next;
  next.kind = curve.kind;
  next.points = c.unclamped.cwiseMax(Real(0)).cwiseMin(Real(1));
  separate_coincident(next.points);
  return next;
}

CurvePrediction CurveGcn::iterative_inference_from(const FeatureMap<Real>& F, int iterations) const {
  const int t_max = iterations < 0 ? cfg_.iterations : std::min(iterations, cfg_.iterations);
  CurvePrediction p;
  p.curves.push_back(initial_curve());
  for (int t = 0; t < t_max; ++t) p.curves.push_back(predict_step(F, p.curves.back(), t));
  return p;
}

CurvePrediction CurveGcn::iterative_inference(const FeatureMap<Real>& image, int iterations) const {
  return iterative_inference_from(extract_features(image).features, iterations);
}

ForwardPass CurveGcn::forward(const FeatureMap<Real>& image) const {
  ForwardPass pass;
  pass.backbone = extract_features(image);
  pass.prediction.curves.push_back(initial_curve());
  pass.steps.resize(cfg_.iterations);
  for (int t = 0; t < cfg_.iterations; ++t)
    pass.prediction.curves.push_back(
        predict_step(pass.backbone.features, pass.prediction.curves.back(), t, &pass.steps[t]));
  return pass;
}

void CurveGcn::backward(const ForwardPass& pass, const std::vector<PointList<Real>>& d_curves,
                        const Matrix<Real>& d_edge, const Matrix<Real>& d_vertex) {
  const auto& F = pass.backbone.features;
  FeatureMap<Real> dF(F.channels, F.height, F.width);
  const Index n = cfg_.control_points;
  PointList<Real> d_next = PointList<Real>::Zero(n, 2);
  for (int t = static_cast<int>(pass.steps.size()) - 1; t >= 0; --t) {
    if (t < static_cast<int>(d_curves.size()) && d_curves[t].size() != 0) d_next += d_curves[t];
    const StepCache& step = pass.steps[t];
    PointList<Real> d_unclamped =
        ((step.unclamped.array() >= Real(0)) && (step.unclamped.array() <= Real(1))).select(d_next, Real(0));
    const Matrix<Real> d_f0 = gcns_[t].backward(store_, topology_, step.gcn, d_unclamped);
    node_input_features_backward(F, step.nodes, d_f0, dF, d_unclamped);
    d_next = std::move(d_unclamped);
  }
  backbone_.backward(store_, pass.backbone, dF, d_edge, d_vertex);
}

}  // namespace curvegcn
