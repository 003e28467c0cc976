// seanet: one binary exposing dataset preparation, training, evaluation,
// gradient checking and feature export.
//
// Exit codes: 0 success, 2 input/config error, 3 numerical failure,
// 4 artifact incompatibility.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "seanet/checkpoint.hpp"
#include "seanet/gradcheck.hpp"
#include "seanet/manifest.hpp"
#include "seanet/metrics.hpp"
#include "seanet/pipeline.hpp"
#include "seanet/run_config.hpp"
#include "seanet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIncompatible = 4;

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::string> out_dir;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "Flat key = value configuration file");
    sub->add_option("--seed", seed, "RNG seed");
    sub->add_option("--precision", precision, "Float width: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--out-dir", out_dir, "Output directory");
  }

  seanet::RunConfig build() const {
    seanet::RunConfig cfg;
    if (config) cfg.load_file(*config);
    if (seed) cfg.seed = *seed;
    if (precision) cfg.precision = *precision;
    if (out_dir) cfg.out_dir = *out_dir;
    return cfg;
  }
};

void require_out_dir(const seanet::RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw seanet::ConfigError("--out-dir (or out_dir key) is required");
}

// ---------------------------------------------------------------- prepare --

struct PrepareArgs {
  std::optional<std::string> manifest;
  bool synthetic = false;
  std::optional<int> classes;
  int train_per_class = 200;
  int test_per_class = 50;
  std::optional<int> image_size;
  std::optional<int> crop_threshold;
};

template <typename S>
int run_prepare(const seanet::RunConfig& cfg, const PrepareArgs& args) {
  using namespace seanet;
  require_out_dir(cfg);
  DatasetManifest manifest;
  if (args.manifest) {
    manifest = DatasetManifest::load(*args.manifest);
  } else if (args.synthetic) {
    manifest = synth_manifest(cfg.classes, args.train_per_class, args.test_per_class, cfg.seed);
  } else {
    throw ConfigError("prepare needs --manifest FILE or --synthetic");
  }
  if (manifest.records.empty()) throw ConfigError("manifest has no records");

  const fs::path out = cfg.out_dir;
  const PreprocessStats stats = prepare_cache<S>(manifest, out, cfg.image_size,
                                                 cfg.crop_threshold);
  std::printf("prepared %zu records into %s (image size %d)\n", manifest.records.size(),
              out.string().c_str(), cfg.image_size);
  for (int c = 0; c < 3; ++c) {
    std::printf("channel %d: mean %.4f std %.4f\n", c, stats.mean[(std::size_t)c],
                stats.stddev[(std::size_t)c]);
  }
  return kExitOk;
}

// ------------------------------------------------------------------ train --

struct TrainArgs {
  std::optional<std::string> data;
  std::optional<std::string> placement;
  std::optional<double> lambda;
  std::optional<int> epochs;
  std::optional<std::string> resume;
};

template <typename S>
int run_train(seanet::RunConfig cfg, const TrainArgs& args) {
  using namespace seanet;
  if (args.data) cfg.data_dir = *args.data;
  if (args.placement) cfg.set("placement", *args.placement);
  if (args.lambda) cfg.lambda = *args.lambda;
  if (args.epochs) cfg.epochs = *args.epochs;
  cfg.validate_or_throw();
  require_out_dir(cfg);
  if (cfg.data_dir.empty()) throw ConfigError("--data (or data_dir key) is required");

  const fs::path cache = cfg.data_dir;
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  write_text_file(out / "config.txt", cfg.echo());

  DatasetManifest manifest = DatasetManifest::load(cache / "manifest.csv");
  TensorDataset<S> train_set = load_cache_split<S>(cache, manifest, Split::Train);
  TensorDataset<S> test_set = load_cache_split<S>(cache, manifest, Split::Test);

  Model<S> model = [&]() {
    if (!args.resume) return build_model<S>(cfg.model_config(), cfg.seed);
    const std::string ckpt_precision = checkpoint_precision(*args.resume);
    if (ckpt_precision != cfg.precision) {
      throw IncompatibleError("checkpoint precision " + ckpt_precision +
                              " does not match configured " + cfg.precision);
    }
    if (!(checkpoint_config(*args.resume) == cfg.model_config())) {
      throw IncompatibleError("checkpoint model config does not match the requested config");
    }
    return load_model<S>(*args.resume);
  }();

  TrainOptions opts;
  opts.lambda = cfg.lambda;
  opts.center_alpha = cfg.center_alpha;
  opts.sgd = cfg.sgd_config();
  opts.augment = cfg.augment_policy();
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  opts.checkpoint_dir = out / "checkpoints";
  opts.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %d loss %.6f aca %.4f macro_f1 %.4f auc %.4f\n", r.epoch, r.loss, r.aca,
                r.macro_f1, r.auc);
    std::fflush(stdout);
  };

  TrainResult<S> result;
  if (args.resume) {
    TrainState<S> state = load_train_state(*args.resume, model);
    result = train(model, train_set, test_set, opts, &state);
  } else {
    result = train(model, train_set, test_set, opts);
  }

  write_text_file(out / "metrics.csv", metrics_csv(result.history));
  const EpochRecord& last = result.history.back();
  std::printf("final aca=%.6f macro_f1=%.6f auc=%.6f\n", last.aca, last.macro_f1, last.auc);
  return kExitOk;
}

// ------------------------------------------------------------------- eval --

struct EvalArgs {
  std::optional<std::string> checkpoint;
  std::optional<std::string> data;
  bool oracle = false;
};

std::string roc_csv(const std::vector<seanet::RocCurve>& curves) {
  std::string out = "class,threshold,fpr,tpr\n";
  for (const auto& curve : curves) {
    for (const auto& p : curve.points) {
      out += std::to_string(curve.class_id) + "," + seanet::fmt_g(p.threshold) + "," +
             seanet::fmt_g(p.fpr) + "," + seanet::fmt_g(p.tpr) + "\n";
    }
  }
  return out;
}

void write_eval_outputs(const fs::path& out, const seanet::ConfusionMatrix& cm, double aca_v,
                        double f1_v, const seanet::MulticlassAucResult& auc) {
  using namespace seanet;
  fs::create_directories(out);
  json j;
  j["aca"] = aca_v;
  j["macro_f1"] = f1_v;
  j["auc"] = auc.macro_auc;
  j["classes"] = cm.num_classes();
  j["samples"] = cm.total();
  j["per_class_auc"] = json::array();
  for (double v : auc.per_class) {
    if (std::isnan(v)) {
      j["per_class_auc"].push_back(nullptr);
    } else {
      j["per_class_auc"].push_back(v);
    }
  }
  j["skipped_classes"] = auc.skipped;
  write_text_file(out / "metrics.json", j.dump(2) + "\n");
  write_text_file(out / "confusion.csv", cm.to_csv());
  write_text_file(out / "roc.csv", roc_csv(auc.curves));
  std::printf("aca=%.6f macro_f1=%.6f auc=%.6f\n", aca_v, f1_v, auc.macro_auc);
}

template <typename S>
int run_eval(const seanet::RunConfig& cfg, const EvalArgs& args) {
  using namespace seanet;
  require_out_dir(cfg);
  if (!args.data) throw ConfigError("--data is required");
  const fs::path cache = *args.data;
  DatasetManifest manifest = DatasetManifest::load(cache / "manifest.csv");
  TensorDataset<S> test_set = load_cache_split<S>(cache, manifest, Split::Test);
  if (test_set.size() == 0) throw ConfigError("cache has no test records");

  if (args.oracle) {
    // Self-check path: the labels themselves act as one-hot probabilities.
    const int k = manifest.num_classes();
    ConfusionMatrix cm(k);
    std::vector<double> probs;
    for (int y : test_set.labels) {
      cm.add(y, y);
      for (int j = 0; j < k; ++j) probs.push_back(j == y ? 1.0 : 0.0);
    }
    MulticlassAucResult auc = multiclass_auc(probs, test_set.labels, k);
    write_eval_outputs(cfg.out_dir, cm, aca(cm), macro_f1(cm), auc);
    return kExitOk;
  }

  if (!args.checkpoint) throw ConfigError("--checkpoint is required");
  try {
    Model<S> model = load_model<S>(*args.checkpoint);
    if (manifest.num_classes() != model.cfg.num_classes) {
      throw IncompatibleError("checkpoint has " + std::to_string(model.cfg.num_classes) +
                              " classes but the dataset covers " +
                              std::to_string(manifest.num_classes()));
    }
    EvalResult<S> ev = evaluate(model, test_set, cfg.batch_size);
    write_eval_outputs(cfg.out_dir, ev.cm, ev.aca, ev.macro_f1, ev.auc_detail);
  } catch (const ShapeError& e) {
    // In this context a shape mismatch means checkpoint and data disagree.
    throw IncompatibleError(std::string("checkpoint incompatible with dataset: ") + e.what());
  }
  return kExitOk;
}

// -------------------------------------------------------------- gradcheck --

struct GradcheckArgs {
  std::string placement = "all";
  std::optional<double> lambda;
};

int run_gradcheck(const seanet::RunConfig& cfg, const GradcheckArgs& args) {
  using namespace seanet;
  // Verification runs at a fixed desk scale: N=2 images of 8x8, C=8
  // attention channels, K=5 classes, in 64-bit precision.
  if (cfg.precision != "f64") {
    throw ConfigError("gradcheck requires --precision f64 (finite differences need 64-bit)");
  }
  std::vector<Placement> placements;
  if (args.placement == "all") {
    placements = {Placement::AT, Placement::SE_AT, Placement::AT_SE, Placement::SEA};
  } else {
    placements = {placement_from_string(args.placement)};
  }

  ModelConfig mc;
  mc.num_classes = 5;
  mc.backbone_channels = {4, 8, 8};
  mc.backbone_strides = {1, 2, 2};
  mc.attention_channels = {8, 8};
  mc.se_reduction = 4;

  Rng rng(Rng::mix(cfg.seed, 0x67636b00ull));
  Tensor<double> images(Shape{2, 8, 8, 3});
  fill_uniform(images, rng, -1.0, 1.0);
  std::vector<int> labels{static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5))};

  HybridLossConfig loss_cfg;
  loss_cfg.lambda = args.lambda.value_or(cfg.lambda);
  loss_cfg.class_weights = ClassWeights::from_counts({10, 8, 6, 4, 2});
  ClassCenters<double> centers = ClassCenters<double>::zeros(5, 8, cfg.center_alpha);
  fill_uniform(centers.centers, rng, -0.5, 0.5);

  double worst = 0;
  for (Placement placement : placements) {
    mc.placement = placement;
    Model<double> model = build_model<double>(mc, cfg.seed);
    const auto rows = check_model_gradients(model, images, labels, loss_cfg, centers);
    for (const auto& row : rows) {
      std::printf("%-6s %-28s %10.3e %s\n", to_string(placement), row.group.c_str(),
                  row.max_rel_err, row.max_rel_err < 1e-4 ? "ok" : "FAIL");
      worst = std::max(worst, row.max_rel_err);
    }
  }
  std::printf("worst relative error: %.3e\n", worst);
  if (worst >= 1e-4) {
    throw NumericError("gradient check failed: worst relative error " + fmt_g(worst));
  }
  return kExitOk;
}

// --------------------------------------------------------------- features --

struct FeaturesArgs {
  std::optional<std::string> checkpoint;
  std::optional<std::string> data;
  std::optional<std::string> out_file;
};

template <typename S>
int run_features(const seanet::RunConfig& cfg, const FeaturesArgs& args) {
  using namespace seanet;
  if (!args.checkpoint) throw ConfigError("--checkpoint is required");
  if (!args.data) throw ConfigError("--data is required");
  fs::path out_file;
  if (args.out_file) {
    out_file = *args.out_file;
  } else {
    require_out_dir(cfg);
    fs::create_directories(cfg.out_dir);
    out_file = fs::path(cfg.out_dir) / "features.csv";
  }

  const fs::path cache = *args.data;
  DatasetManifest manifest = DatasetManifest::load(cache / "manifest.csv");
  TensorDataset<S> test_set = load_cache_split<S>(cache, manifest, Split::Test);
  if (test_set.size() == 0) throw ConfigError("cache has no test records");
  const auto test_indices = manifest.indices_of(Split::Test);

  try {
    Model<S> model = load_model<S>(*args.checkpoint);
    const auto rows = export_features(model, test_set, cfg.batch_size);
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    std::string csv = "id,label";
    for (std::size_t j = 0; j < dim; ++j) csv += ",f" + std::to_string(j);
    csv += "\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      csv += std::to_string(test_indices[i]) + "," + std::to_string(test_set.labels[i]);
      for (double v : rows[i]) csv += "," + fmt_g(v);
      csv += "\n";
    }
    write_text_file(out_file, csv);
    std::printf("wrote %zu feature rows (dim %zu) to %s\n", rows.size(), dim,
                out_file.string().c_str());
  } catch (const ShapeError& e) {
    throw IncompatibleError(std::string("checkpoint incompatible with dataset: ") + e.what());
  }
  return kExitOk;
}

template <typename Fn>
int dispatch_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f64") return fn(double{});
  return fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SEA-Net style trainer: spatial attention with SE channel recalibration"};
  app.require_subcommand(1);

  CommonFlags prepare_common, train_common, eval_common, gradcheck_common, features_common;
  PrepareArgs prepare_args;
  TrainArgs train_args;
  EvalArgs eval_args;
  GradcheckArgs gradcheck_args;
  FeaturesArgs features_args;

  CLI::App* prepare = app.add_subcommand("prepare", "Build the preprocessed dataset cache");
  prepare_common.attach(prepare);
  prepare->add_option("--cache-dir", prepare_common.out_dir,
                      "Cache location (same as --out-dir)");
  prepare->add_option("--manifest", prepare_args.manifest, "Dataset manifest CSV");
  prepare->add_flag("--synthetic", prepare_args.synthetic, "Generate the synthetic dataset");
  prepare->add_option("--classes", prepare_args.classes, "Synthetic class count");
  prepare->add_option("--train-per-class", prepare_args.train_per_class,
                      "Synthetic training samples per class");
  prepare->add_option("--test-per-class", prepare_args.test_per_class,
                      "Synthetic test samples per class");
  prepare->add_option("--image-size", prepare_args.image_size, "Preprocessed image size");
  prepare->add_option("--crop-threshold", prepare_args.crop_threshold,
                      "Background luminance threshold (0..255)");

  CLI::App* train = app.add_subcommand("train", "Train a model on a prepared cache");
  train_common.attach(train);
  train->add_option("--data,--cache-dir", train_args.data, "Prepared cache directory");
  train->add_option("--placement", train_args.placement, "at, se-at, at-se or sea")
      ->check(CLI::IsMember({"at", "se-at", "at-se", "sea"}));
  train->add_option("--lambda", train_args.lambda, "Center-loss strength");
  train->add_option("--epochs", train_args.epochs, "Epochs to train to");
  train->add_option("--resume", train_args.resume, "Checkpoint directory to resume from");

  CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_common.attach(evalc);
  evalc->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory");
  evalc->add_option("--data,--cache-dir", eval_args.data, "Prepared cache directory");
  evalc->add_flag("--oracle", eval_args.oracle,
                  "Self-check: score the labels themselves instead of a model");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gradcheck_common.attach(gradcheck);
  gradcheck->add_option("--placement", gradcheck_args.placement,
                        "all (default) or one of at, se-at, at-se, sea");
  gradcheck->add_option("--lambda", gradcheck_args.lambda, "Center-loss strength");

  CLI::App* features = app.add_subcommand("features", "Export test-split feature vectors");
  features_common.attach(features);
  features->add_option("--checkpoint", features_args.checkpoint, "Checkpoint directory");
  features->add_option("--data,--cache-dir", features_args.data, "Prepared cache directory");
  features->add_option("--out", features_args.out_file, "Output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      seanet::RunConfig cfg = prepare_common.build();
      if (prepare_args.classes) cfg.classes = *prepare_args.classes;
      if (prepare_args.image_size) cfg.image_size = *prepare_args.image_size;
      if (prepare_args.crop_threshold) cfg.crop_threshold = *prepare_args.crop_threshold;
      return dispatch_precision(cfg.precision,
                                [&](auto s) { return run_prepare<decltype(s)>(cfg, prepare_args); });
    }
    if (train->parsed()) {
      seanet::RunConfig cfg = train_common.build();
      return dispatch_precision(cfg.precision,
                                [&](auto s) { return run_train<decltype(s)>(cfg, train_args); });
    }
    if (evalc->parsed()) {
      seanet::RunConfig cfg = eval_common.build();
      std::string precision = cfg.precision;
      if (!eval_common.precision && eval_args.checkpoint) {
        precision = seanet::checkpoint_precision(*eval_args.checkpoint);
      }
      return dispatch_precision(precision,
                                [&](auto s) { return run_eval<decltype(s)>(cfg, eval_args); });
    }
    if (gradcheck->parsed()) {
      seanet::RunConfig cfg = gradcheck_common.build();
      if (!gradcheck_common.precision) cfg.precision = "f64";
      return run_gradcheck(cfg, gradcheck_args);
    }
    if (features->parsed()) {
      seanet::RunConfig cfg = features_common.build();
      std::string precision = cfg.precision;
      if (!features_common.precision && features_args.checkpoint) {
        precision = seanet::checkpoint_precision(*features_args.checkpoint);
      }
      return dispatch_precision(
          precision, [&](auto s) { return run_features<decltype(s)>(cfg, features_args); });
    }
  } catch (const seanet::IncompatibleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIncompatible;
  } catch (const seanet::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const seanet::GraphError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}
