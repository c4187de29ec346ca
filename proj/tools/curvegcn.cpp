// curvegcn: dataset generation, training, evaluation, batch annotation,
// gradient checks and the annotation HTTP service.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>

#include "curvegcn/checkpoint.hpp"
#include "curvegcn/data.hpp"
#include "curvegcn/gradcheck.hpp"
#include "curvegcn/service.hpp"
#include "curvegcn/trainer.hpp"

namespace fs = std::filesystem;
using namespace curvegcn;
using nlohmann::json;

namespace {

// Usage problems detected after parsing (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<Sample> load_split(const fs::path& data, const std::string& split) {
  return load_all(load_manifest(manifest_path(data, split)));
}

void print_epoch(const std::string& phase, const EpochLog& e) {
  std::cout << phase << " epoch " << std::setw(2) << e.epoch << "  lr " << std::scientific << std::setprecision(1)
            << e.lr << std::fixed << std::setprecision(5) << "  loss " << e.train_loss;
  if (!std::isnan(e.val_iou)) std::cout << "  val IoU " << std::setprecision(4) << e.val_iou;
  std::cout << "  (" << std::setprecision(1) << e.seconds << " s)" << std::endl;
}

void write_json(const fs::path& file, const json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(1) << "\n";
}

struct Options {
  // gen-data
  fs::path out_dir;
  int train_count = 500, test_count = 100, size = 64;
  std::uint64_t seed = 0;
  // train / eval / annotate / serve
  std::string config;
  fs::path data, out, init, checkpoint, report;
  std::string phase = "matching", mode = "automatic", split = "test";
  std::vector<double> thresholds;
  int max_clicks = 20, points = 160, port = 8080, cases = 100;
  std::string host = "127.0.0.1";
};

int gen_data(const Options& o) {
  gen_synthetic(o.out_dir, "train", o.train_count, o.seed, o.size);
  gen_synthetic(o.out_dir, "test", o.test_count, o.seed, o.size);
  std::cout << "wrote " << o.train_count << " train and " << o.test_count << " test samples to " << o.out_dir.string()
            << "\n";
  return 0;
}

TrainConfig resolve_config(const Options& o) {
  std::string path = o.config;
  if (path.empty())
    if (const char* env = std::getenv("CURVEGCN_CONFIG")) path = env;
  if (path.empty()) return TrainConfig{};
  return load_train_config(path);
}

int train(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  auto [train_set, val_set] = split_validation(load_split(o.data, "train"), cfg.seed, cfg.validation_fraction);
  std::cout << train_set.size() << " training / " << val_set.size() << " validation samples\n";

  if (o.phase == "matching") {
    CurveGcn model(cfg.model, cfg.seed);
    const auto r = train_matching_phase(model, train_set, val_set, cfg,
                                        [](const EpochLog& e) { print_epoch("matching", e); });
    save_checkpoint(o.out, model, nullptr, json{{"phase", "matching"}, {"best_epoch", r.best_epoch}});
  } else {
    if (o.init.empty()) throw UsageError("--phase " + o.phase + " needs --init <checkpoint>");
    Checkpoint ck = load_checkpoint(o.init);
    if (o.phase == "diffacc") {
      const auto r = finetune_diffacc_phase(ck.model, train_set, val_set, cfg,
                                            [](const EpochLog& e) { print_epoch("diffacc", e); });
      save_checkpoint(o.out, ck.model, ck.interactive ? &*ck.interactive : nullptr,
                      json{{"phase", "diffacc"}, {"best_epoch", r.best_epoch}});
    } else {
      InteractiveGcn inter(ck.model.config(), mix_seed(cfg.seed, 7));
      train_interactive(inter, ck.model, train_set, cfg, [](const EpochLog& e) { print_epoch("interactive", e); });
      save_checkpoint(o.out, ck.model, &inter, json{{"phase", "interactive"}});
    }
  }
  std::cout << "checkpoint " << o.out.string() << "  sha256 " << checkpoint_hash(o.out) << "\n";
  return 0;
}

int eval(const Options& o) {
  if (o.mode == "automatic" && !o.thresholds.empty()) throw UsageError("--thresholds requires --mode interactive");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto samples = load_split(o.data, o.split);
  const ModelPredictor predictor(ck.model, ck.interactive ? &*ck.interactive : nullptr);
  EvalReport rep;
  if (o.mode == "automatic") {
    rep = evaluate(predictor, samples);
  } else {
    const std::vector<double> t = o.thresholds.empty() ? std::vector<double>{0.75, 0.8, 0.85, 0.9} : o.thresholds;
    rep = evaluate_interactive(predictor, samples, t, o.max_clicks);
  }
  std::cout << rep.summary_table();
  if (!o.report.empty()) write_json(o.report, rep);
  return 0;
}

int annotate(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto samples = load_split(o.data, o.split);
  fs::create_directories(o.out);
  const int size = ck.model.config().input_size;
  for (const auto& s : samples) {
    const auto curve = ck.model.iterative_inference(model_input(s, size)).final_curve();
    PointList<double> pts = curve.kind == CurveKind::Polygon ? PointList<double>(curve.points.cast<double>())
                                                              : sample_curve(curve, o.points).points.cast<double>();
    pts.col(0) *= double(s.width());
    pts.col(1) *= double(s.height());
    write_annotation({s.id, pts, s.height(), s.width()}, o.out / (s.id + ".json"));
  }
  std::cout << "wrote " << samples.size() << " annotations to " << o.out.string() << "\n";
  return 0;
}

int gradcheck(const Options& o) {
  GradcheckOptions opt;
  opt.cases = o.cases;
  opt.seed = o.seed;
  bool ok = true;
  for (const auto& r : run_gradcheck(opt)) {
    std::cout << std::left << std::setw(28) << r.name << std::right << " cases " << std::setw(4) << r.cases
              << "  max rel err " << std::scientific << std::setprecision(2) << r.max_rel_error << "  (tol "
              << r.tolerance << ")  " << (r.passed() ? "ok" : "FAILED") << std::defaultfloat << "\n";
    ok = ok && r.passed();
  }
  return ok ? 0 : 2;
}

int serve_cmd(const Options& o) {
  if (!fs::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint.string());
  auto ck = std::make_shared<const Checkpoint>(load_checkpoint(o.checkpoint));
  AnnotationService service(ck, checkpoint_hash(o.checkpoint));
  std::cout << "serving on http://" << o.host << ":" << o.port << std::endl;
  serve(service, o.host, o.port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curve-GCN contour annotation engine"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic blob dataset");
  gen->add_option("--out", o.out_dir, "Output directory")->required();
  gen->add_option("--train", o.train_count, "Training samples")->check(CLI::PositiveNumber);
  gen->add_option("--test", o.test_count, "Test samples")->check(CLI::PositiveNumber);
  gen->add_option("--size", o.size, "Image size in pixels")->check(CLI::Range(8, 4096));
  gen->add_option("--seed", o.seed, "Random seed");

  auto* tr = app.add_subcommand("train", "Run one training phase");
  tr->add_option("--config", o.config, "Training config JSON (default: $CURVEGCN_CONFIG)");
  tr->add_option("--data", o.data, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Output checkpoint")->required();
  tr->add_option("--phase", o.phase, "Training phase")
      ->check(CLI::IsMember({"matching", "diffacc", "interactive"}));
  tr->add_option("--init", o.init, "Checkpoint to continue from (diffacc, interactive)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--split", o.split, "Split name");
  ev->add_option("--mode", o.mode, "Evaluation mode")->check(CLI::IsMember({"automatic", "interactive"}));
  ev->add_option("--thresholds", o.thresholds, "IoU thresholds (interactive)")->delimiter(',');
  ev->add_option("--max-clicks", o.max_clicks, "Click budget per sample")->check(CLI::NonNegativeNumber);
  ev->add_option("--report", o.report, "Write the report JSON here");

  auto* an = app.add_subcommand("annotate", "Predict contours for a split and write annotation JSON");
  an->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  an->add_option("--data", o.data, "Dataset directory")->required();
  an->add_option("--split", o.split, "Split name");
  an->add_option("--out", o.out, "Output directory")->required();
  an->add_option("--points", o.points, "Contour points per spline")->check(CLI::Range(3, 100000));

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc->add_option("--cases", o.cases, "Random cases per check")->check(CLI::PositiveNumber);
  gc->add_option("--seed", o.seed, "Random seed");

  auto* sv = app.add_subcommand("serve", "Serve the annotation HTTP API");
  sv->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  sv->add_option("--port", o.port, "TCP port")->check(CLI::Range(1, 65535));
  sv->add_option("--host", o.host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return gen_data(o);
    if (*tr) return train(o);
    if (*ev) return eval(o);
    if (*an) return annotate(o);
    if (*gc) return gradcheck(o);
    if (*sv) return serve_cmd(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
