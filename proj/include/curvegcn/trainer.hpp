#pragma once

// Training phases (matching loss, differentiable-accuracy fine-tuning,
// interactive GCN) and the evaluation harness.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "curvegcn/data.hpp"
#include "curvegcn/interactive.hpp"
#include "curvegcn/model.hpp"

namespace curvegcn {

struct TrainConfig {
  ModelConfig model;
  double lr = 3e-5;
  double lr_decay = 0.1;
  int lr_decay_every = 7;
  int batch_size = 8;
  int epochs = 30;
  int diffacc_epochs = 10;
  double diffacc_lr = 3e-5;
  double bce_weight = 1.0;
  double grad_clip = 0.0;  // global gradient-norm cap; 0 disables
  double validation_fraction = 0.1;
  int patience = 5;
  int interactive_rounds = 3;
  int interactive_epochs = 5;
  double interactive_lr = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& file);

// Samples whose id falls in the validation split go to `second`.
std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::vector<Sample> samples, std::uint64_t seed,
                                                                     double fraction);

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_iou = 0;
  double seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;  // -1 after fine-tuning: no epoch beat the starting weights
  double best_val_iou = 0;
  int steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Matching loss on every iteration's curve (equal weights) plus weighted
// edge/vertex BCE. Weights of the best validation epoch are kept in `model`.
TrainResult train_matching_phase(CurveGcn& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Same schedule with the render loss in place of the matching loss. The
// starting weights are kept unless some epoch validates higher.
TrainResult finetune_diffacc_phase(CurveGcn& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                   const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Chained annotator rounds per sample with the base model frozen; matching
// loss on each round's curve, gradients through the whole chain.
TrainResult train_interactive(InteractiveGcn& model, const CurveGcn& base, const std::vector<Sample>& train,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Mean matching loss (per contour point) over the rounds of the chain, with
// no parameter update.
double interactive_loss(const InteractiveGcn& model, const CurveGcn& base, const std::vector<Sample>& samples,
                        int rounds);

// ---------------------------------------------------------------------------
// Evaluation

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual ControlCurve<Real> predict(const Sample& s) const = 0;
  // Curve update applied after a simulated click on `s`.
  virtual CorrectionStep correction_step(const Sample&) const { return pin_only_step(); }
  virtual int contour_samples() const { return 1280; }
};

class ModelPredictor : public Predictor {
 public:
  // interactive == nullptr: clicks only pin the corrected node.
  explicit ModelPredictor(const CurveGcn& model, const InteractiveGcn* interactive = nullptr)
      : model_(model), interactive_(interactive) {}
  ControlCurve<Real> predict(const Sample& s) const override;
  CorrectionStep correction_step(const Sample& s) const override;
  int contour_samples() const override { return model_.config().samples; }

 private:
  const CurveGcn& model_;
  const InteractiveGcn* interactive_;
};

struct SampleRecord {
  std::string id;
  double iou = 0;
  double f1 = 0;  // boundary F at 1 px
  double f2 = 0;  // boundary F at 2 px
  std::vector<int> clicks;  // per interactive threshold
  std::vector<std::vector<double>> traces;
};

struct ThresholdStats {
  double threshold = 0;
  double mean_clicks = 0;
  double mean_final_iou = 0;
  double reached_fraction = 0;
  std::vector<double> mean_iou_by_clicks;  // index = click budget
};

struct EvalReport {
  std::string mode = "automatic";
  double mean_iou = 0;
  double mean_f1 = 0;
  double mean_f2 = 0;
  std::vector<SampleRecord> records;
  std::vector<ThresholdStats> interactive;

  std::string summary_table() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport evaluate(const Predictor& predictor, const std::vector<Sample>& samples);

// Interactive mode: automatic metrics plus an annotate_until sweep per threshold.
EvalReport evaluate_interactive(const Predictor& predictor, const std::vector<Sample>& samples,
                                const std::vector<double>& thresholds, int max_clicks);

}  // namespace curvegcn
