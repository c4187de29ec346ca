#include "curvegcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "curvegcn/losses.hpp"
#include "curvegcn/random.hpp"

namespace curvegcn {

using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0) || !(diffacc_lr > 0) || !(interactive_lr > 0)) throw Error("train config: learning rates must be positive");
  if (!(lr_decay > 0)) throw Error("train config: lr_decay must be positive");
  if (batch_size < 1) throw Error("train config: batch_size must be positive");
  if (epochs < 0 || diffacc_epochs < 0 || interactive_epochs < 0) throw Error("train config: negative epoch count");
  if (bce_weight < 0 || grad_clip < 0) throw Error("train config: negative weight");
  if (validation_fraction < 0 || validation_fraction >= 1) throw Error("train config: validation_fraction out of [0, 1)");
  if (patience < 1) throw Error("train config: patience must be positive");
  if (interactive_rounds < 0) throw Error("train config: interactive_rounds must be non-negative");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},
           {"lr", c.lr},
           {"lr_decay", c.lr_decay},
           {"lr_decay_every", c.lr_decay_every},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"diffacc_epochs", c.diffacc_epochs},
           {"diffacc_lr", c.diffacc_lr},
           {"bce_weight", c.bce_weight},
           {"grad_clip", c.grad_clip},
           {"validation_fraction", c.validation_fraction},
           {"patience", c.patience},
           {"interactive_rounds", c.interactive_rounds},
           {"interactive_epochs", c.interactive_epochs},
           {"interactive_lr", c.interactive_lr},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.model = j.value("model", d.model);
  c.lr = j.value("lr", d.lr);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.lr_decay_every = j.value("lr_decay_every", d.lr_decay_every);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.diffacc_epochs = j.value("diffacc_epochs", d.diffacc_epochs);
  c.diffacc_lr = j.value("diffacc_lr", d.diffacc_lr);
  c.bce_weight = j.value("bce_weight", d.bce_weight);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.patience = j.value("patience", d.patience);
  c.interactive_rounds = j.value("interactive_rounds", d.interactive_rounds);
  c.interactive_epochs = j.value("interactive_epochs", d.interactive_epochs);
  c.interactive_lr = j.value("interactive_lr", d.interactive_lr);
  c.seed = j.value("seed", d.seed);
}

TrainConfig load_train_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  TrainConfig c;
  try {
    c = json::parse(in).get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::vector<Sample> samples, std::uint64_t seed,
                                                                     double fraction) {
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (auto& s : samples)
    (in_validation_split(s.id, seed, fraction) ? out.second : out.first).push_back(std::move(s));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Prepared {
  const Sample* sample = nullptr;
  FeatureMap<Real> input;
  PointList<Real> gt_points;  // K-point resampling of the GT polygon
  Matrix<Real> edge, vertex;
};

std::vector<Prepared> prepare(const std::vector<Sample>& samples, const ModelConfig& cfg) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Prepared p;
    p.sample = &s;
    p.input = model_input(s, cfg.input_size);
    const PointList<double> unit = s.unit_polygon();
    p.gt_points = resample_gt(unit, cfg.samples);
    if (cfg.boundary_branches) {
      p.edge = edge_target(unit, cfg.feature_grid());
      p.vertex = vertex_target(unit, cfg.feature_grid());
    }
    out.push_back(std::move(p));
  }
  return out;
}

double mean_iou(const CurveGcn& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0;
  const auto& cfg = model.config();
  double total = 0;
  for (const auto& s : samples) {
    const auto curve = model.iterative_inference(model_input(s, cfg.input_size)).final_curve();
    total += iou(curve_mask(curve, cfg.samples, s.height(), s.width()), s.gt_mask);
  }
  return total / double(samples.size());
}

struct Schedule {
  int epochs = 0;
  double lr = 0;
  std::uint64_t stream = 0;  // distinguishes the shuffling of each phase
  bool early_stop = true;
  bool keep_start = false;  // the starting weights compete as epoch -1
};

using SampleStep = std::function<double(std::size_t)>;
using Validate = std::function<double()>;  // NaN when there is nothing to validate on

std::vector<Matrix<Real>> snapshot(const ParamStore<Real>& store) {
  std::vector<Matrix<Real>> v;
  for (const auto& p : store) v.push_back(p.value);
  return v;
}

void restore(ParamStore<Real>& store, const std::vector<Matrix<Real>>& v) {
  std::size_t i = 0;
  for (auto& p : store) p.value = v[i++];
}

TrainResult run_schedule(ParamStore<Real>& store, std::size_t n, const TrainConfig& cfg, const Schedule& sched,
                         const SampleStep& step, const Validate& validate, const std::vector<std::string>& ids,
                         const EpochCallback& on_epoch) {
  TrainResult result;
  if (n == 0 && sched.epochs > 0) throw Error("training: empty dataset");
  std::vector<Matrix<Real>> best;
  int since_best = 0;
  // Every phase starts Adam afresh, as it would from a checkpoint.
  store.reset_optimizer();
  if (sched.keep_start && sched.epochs > 0) {
    const double start = validate();
    if (!std::isnan(start)) {
      result.best_val_iou = start;
      best = snapshot(store);
    }
  }
  store.zero_grad();
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = step_decay_lr(sched.lr, cfg.lr_decay, cfg.lr_decay_every, epoch);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(mix_seed(cfg.seed, sched.stream), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());

    double total = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t k = b; k < e; ++k) {
        const double loss = step(order[k]);
        if (!std::isfinite(loss))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", sample " + ids[order[k]] +
                             " (step " + std::to_string(result.steps) + ")");
        total += loss;
      }
      store.scale_grad(Real(1) / Real(e - b));
      if (cfg.grad_clip > 0) {
        const Real norm = store.grad_norm();
        if (norm > Real(cfg.grad_clip)) store.scale_grad(Real(cfg.grad_clip) / norm);
      }
      adam_step(store, Real(log.lr));
      ++result.steps;
    }
    log.train_loss = total / double(n);
    log.val_iou = validate();
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (std::isnan(log.val_iou)) {
      result.best_epoch = epoch;
      continue;
    }
    if (best.empty() || log.val_iou > result.best_val_iou) {
      result.best_epoch = epoch;
      result.best_val_iou = log.val_iou;
      best = snapshot(store);
      since_best = 0;
    } else if (sched.early_stop && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (!best.empty()) restore(store, best);
  return result;
}

std::vector<std::string> ids_of(const std::vector<Sample>& samples) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

// Shared between the two base-model phases: per-iteration contour loss plus BCE.
using ContourLoss = std::function<double(const PointList<Real>& contour, const Prepared& p, PointList<Real>& grad)>;

TrainResult train_base(CurveGcn& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                       const TrainConfig& cfg, const Schedule& sched, const ContourLoss& contour_loss,
                       const EpochCallback& on_epoch) {
  const auto& mc = model.config();
  const auto data = prepare(train, mc);
  const Real w = Real(cfg.bce_weight);
  const SampleStep step = [&](std::size_t i) {
    const Prepared& p = data[i];
    const ForwardPass pass = model.forward(p.input);
    std::vector<PointList<Real>> d_curves(mc.iterations);
    double loss = 0;
    for (int t = 0; t < mc.iterations; ++t) {
      const auto& curve = pass.prediction.curves[t + 1];
      const auto contour = sample_curve(curve, mc.samples);
      PointList<Real> grad;
      loss += contour_loss(contour.points, p, grad);
      d_curves[t] = sample_curve_backward(curve, contour, grad);
    }
    Matrix<Real> d_edge, d_vertex;
    if (mc.boundary_branches && w > 0) {
      const auto& e = pass.backbone.edge_probability();
      const auto& v = pass.backbone.vertex_probability();
      loss += double(w * (bce(e, p.edge) + bce(v, p.vertex)));
      d_edge = w * bce_backward(e, p.edge);
      d_vertex = w * bce_backward(v, p.vertex);
    }
    model.backward(pass, d_curves, d_edge, d_vertex);
    return loss;
  };
  const Validate validate = [&] { return val.empty() ? std::nan("") : mean_iou(model, val); };
  return run_schedule(model.params(), data.size(), cfg, sched, step, validate, ids_of(train), on_epoch);
}

}  // namespace

TrainResult train_matching_phase(CurveGcn& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const ContourLoss loss = [](const PointList<Real>& contour, const Prepared& p, PointList<Real>& grad) {
    const auto m = matching_loss(contour, p.gt_points);
    const Real k = Real(contour.rows());
    grad = m.grad / k;
    return double(m.loss / k);
  };
  return train_base(model, train, val, cfg, {cfg.epochs, cfg.lr, 1, true}, loss, on_epoch);
}

TrainResult finetune_diffacc_phase(CurveGcn& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                   const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const ContourLoss loss = [](const PointList<Real>& contour, const Prepared& p, PointList<Real>& grad) {
    const Mask& gt = p.sample->gt_mask;
    const auto r = render_loss(contour, gt);
    const Real area = Real(gt.height) * Real(gt.width);
    grad = r.grad / area;
    return double(r.loss / area);
  };
  return train_base(model, train, val, cfg, {cfg.diffacc_epochs, cfg.diffacc_lr, 2, true, true}, loss, on_epoch);
}

// ---------------------------------------------------------------------------

namespace {

struct InteractiveData {
  std::vector<FeatureMap<Real>> features;
  std::vector<ControlCurve<Real>> start;
  std::vector<PointList<Real>> gt_nodes, gt_points;
};

InteractiveData prepare_interactive(const CurveGcn& base, const std::vector<Sample>& samples) {
  const auto& mc = base.config();
  InteractiveData d;
  for (const auto& s : samples) {
    const FeatureMap<Real> F = base.extract_features(model_input(s, mc.input_size)).features;
    d.start.push_back(base.iterative_inference_from(F).final_curve());
    d.features.push_back(F);
    const PointList<double> unit = s.unit_polygon();
    d.gt_nodes.push_back(resample_gt(unit, mc.control_points));
    d.gt_points.push_back(resample_gt(unit, mc.samples));
  }
  return d;
}

// Runs the annotator chain for one sample; with `train`, accumulates gradients.
double interactive_chain(InteractiveGcn& model, const InteractiveData& d, std::size_t i, int rounds, int samples,
                         bool train) {
  std::vector<ControlCurve<Real>> curves{d.start[i]};
  std::vector<InteractiveCache> caches(rounds);
  std::vector<PointList<Real>> d_round;
  double loss = 0;
  for (int r = 0; r < rounds; ++r) {
    const Correction corr = simulate_worst_point(curves.back(), d.gt_nodes[i]);
    if (corr.zero_shift()) break;
    curves.push_back(model.masked_predict(d.features[i], curves.back(), corr, &caches[r]));
    const auto contour = sample_curve(curves.back(), samples);
    const auto m = matching_loss(contour.points, d.gt_points[i]);
    const Real k = Real(samples);
    loss += double(m.loss / k);
    if (train) d_round.push_back(sample_curve_backward(curves.back(), contour, PointList<Real>(m.grad / k)));
  }
  if (train && !d_round.empty()) {
    PointList<Real> g = PointList<Real>::Zero(d_round[0].rows(), 2);
    for (std::size_t r = d_round.size(); r-- > 0;) {
      g += d_round[r];
      g = model.backward(d.features[i], caches[r], g);
    }
  }
  return loss;
}

}  // namespace

TrainResult train_interactive(InteractiveGcn& model, const CurveGcn& base, const std::vector<Sample>& train,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.interactive_rounds == 0 || cfg.interactive_epochs == 0) return {};
  const InteractiveData d = prepare_interactive(base, train);
  const int samples = base.config().samples;
  const SampleStep step = [&](std::size_t i) {
    return interactive_chain(model, d, i, cfg.interactive_rounds, samples, true);
  };
  const Validate none = [] { return std::nan(""); };
  return run_schedule(model.params(), train.size(), cfg, {cfg.interactive_epochs, cfg.interactive_lr, 3, false}, step,
                      none, ids_of(train), on_epoch);
}

double interactive_loss(const InteractiveGcn& model, const CurveGcn& base, const std::vector<Sample>& samples,
                        int rounds) {
  if (samples.empty() || rounds == 0) return 0;
  const InteractiveData d = prepare_interactive(base, samples);
  // The chain only reads the model when not training.
  auto& m = const_cast<InteractiveGcn&>(model);
  double total = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    total += interactive_chain(m, d, i, rounds, base.config().samples, false) / rounds;
  return total / double(samples.size());
}

// ---------------------------------------------------------------------------
// Evaluation

ControlCurve<Real> ModelPredictor::predict(const Sample& s) const {
  return model_.iterative_inference(model_input(s, model_.config().input_size)).final_curve();
}

CorrectionStep ModelPredictor::correction_step(const Sample& s) const {
  if (!interactive_) return pin_only_step();
  return model_step(*interactive_, model_.extract_features(model_input(s, model_.config().input_size)).features);
}

namespace {

SampleRecord automatic_record(const Predictor& predictor, const Sample& s, ControlCurve<Real>& curve) {
  curve = predictor.predict(s);
  const Mask m = curve_mask(curve, predictor.contour_samples(), s.height(), s.width());
  SampleRecord r;
  r.id = s.id;
  r.iou = iou(m, s.gt_mask);
  r.f1 = boundary_f(m, s.gt_mask, 1.0);
  r.f2 = boundary_f(m, s.gt_mask, 2.0);
  return r;
}

void finish_means(EvalReport& rep) {
  const double n = std::max<double>(1.0, double(rep.records.size()));
  for (const auto& r : rep.records) {
    rep.mean_iou += r.iou;
    rep.mean_f1 += r.f1;
    rep.mean_f2 += r.f2;
  }
  rep.mean_iou /= n;
  rep.mean_f1 /= n;
  rep.mean_f2 /= n;
}

}  // namespace

EvalReport evaluate(const Predictor& predictor, const std::vector<Sample>& samples) {
  EvalReport rep;
  ControlCurve<Real> curve;
  for (const auto& s : samples) rep.records.push_back(automatic_record(predictor, s, curve));
  finish_means(rep);
  return rep;
}

EvalReport evaluate_interactive(const Predictor& predictor, const std::vector<Sample>& samples,
                                const std::vector<double>& thresholds, int max_clicks) {
  if (thresholds.empty()) throw Error("interactive evaluation needs at least one threshold");
  if (max_clicks < 0) throw Error("max_clicks must be non-negative");
  for (double t : thresholds)
    if (!(t >= 0 && t <= 1)) throw Error("IoU thresholds must lie in [0, 1]");
  EvalReport rep;
  rep.mode = "interactive";
  rep.interactive.resize(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    rep.interactive[k].threshold = thresholds[k];
    rep.interactive[k].mean_iou_by_clicks.assign(static_cast<std::size_t>(max_clicks) + 1, 0.0);
  }
  ControlCurve<Real> curve;
  for (const auto& s : samples) {
    SampleRecord r = automatic_record(predictor, s, curve);
    const CorrectionStep step = predictor.correction_step(s);
    const PointList<double> unit = s.unit_polygon();
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      AnnotateOptions opt;
      opt.threshold = thresholds[k];
      opt.max_clicks = max_clicks;
      opt.samples = predictor.contour_samples();
      const AnnotationTrace t = annotate_until(curve, unit, s.gt_mask, step, opt);
      auto& st = rep.interactive[k];
      st.mean_clicks += t.clicks;
      st.mean_final_iou += t.iou.back();
      st.reached_fraction += t.reached ? 1.0 : 0.0;
      for (std::size_t c = 0; c < st.mean_iou_by_clicks.size(); ++c)
        st.mean_iou_by_clicks[c] += t.iou[std::min(c, t.iou.size() - 1)];
      r.clicks.push_back(t.clicks);
      r.traces.push_back(t.iou);
    }
    rep.records.push_back(std::move(r));
  }
  finish_means(rep);
  const double n = std::max<double>(1.0, double(samples.size()));
  for (auto& st : rep.interactive) {
    st.mean_clicks /= n;
    st.mean_final_iou /= n;
    st.reached_fraction /= n;
    for (auto& v : st.mean_iou_by_clicks) v /= n;
  }
  return rep;
}

void to_json(json& j, const EvalReport& r) {
  json records = json::array();
  for (const auto& s : r.records) {
    json rec{{"id", s.id}, {"iou", s.iou}, {"f_1px", s.f1}, {"f_2px", s.f2}};
    if (!s.clicks.empty()) {
      rec["clicks"] = s.clicks;
      rec["traces"] = s.traces;
    }
    records.push_back(std::move(rec));
  }
  j = json{{"mode", r.mode},
           {"samples", r.records.size()},
           {"mean_iou", r.mean_iou},
           {"f_1px", r.mean_f1},
           {"f_2px", r.mean_f2},
           {"records", records}};
  if (!r.interactive.empty()) {
    json sweep = json::array();
    for (const auto& st : r.interactive)
      sweep.push_back({{"threshold", st.threshold},
                       {"mean_clicks", st.mean_clicks},
                       {"mean_final_iou", st.mean_final_iou},
                       {"reached_fraction", st.reached_fraction},
                       {"mean_iou_by_clicks", st.mean_iou_by_clicks}});
    j["interactive"] = sweep;
  }
}

std::string EvalReport::summary_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "mode        " << mode << "\n"
     << "samples     " << records.size() << "\n"
     << "mean IoU    " << mean_iou << "\n"
     << "F @ 1px     " << mean_f1 << "\n"
     << "F @ 2px     " << mean_f2 << "\n";
  if (!interactive.empty()) {
    os << "\n  T       clicks  final IoU  reached\n";
    for (const auto& st : interactive)
      os << "  " << std::setw(6) << st.threshold << "  " << std::setw(6) << std::setprecision(2) << st.mean_clicks
         << "  " << std::setw(9) << std::setprecision(4) << st.mean_final_iou << "  " << std::setw(7)
         << st.reached_fraction << "\n";
  }
  return os.str();
}

}  // namespace curvegcn
