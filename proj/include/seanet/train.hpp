#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "seanet/checkpoint.hpp"
#include "seanet/metrics.hpp"
#include "seanet/optim.hpp"
#include "seanet/pipeline.hpp"

// The epoch/step training loop: deterministic shuffling and augmentation
// streams derived from (seed, epoch), SGD with momentum, center updates
// after every optimizer step, per-epoch evaluation and checkpointing.

namespace seanet {

struct EpochRecord {
  int epoch = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double aca = 0;
  double macro_f1 = 0;
  double auc = 0;
};

inline std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,loss,aca,macro_f1,auc\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt_g(r.loss) + "," + fmt_g(r.aca) + "," +
           fmt_g(r.macro_f1) + "," + fmt_g(r.auc) + "\n";
  }
  return out;
}

struct TrainOptions {
  double lambda = 0.1;
  double center_alpha = 0.5;
  SgdConfig sgd;
  AugmentPolicy augment;
  int epochs = 30;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // empty: keep everything in memory
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename S>
struct TrainResult {
  TrainState<S> state;
  std::vector<EpochRecord> history;
};

namespace detail {

template <typename S>
Tensor<S> stack_images(const std::vector<Tensor<S>>& images) {
  if (images.empty()) throw ShapeError("cannot stack an empty batch");
  const Shape& s = images.front().shape();
  Tensor<S> batch(Shape{static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]});
  const std::int64_t per = s.numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) {
      throw ShapeError("batch mixes image shapes " + s.str() + " and " +
                       images[i].shape().str());
    }
    std::copy_n(images[i].data(), per, batch.data() + static_cast<std::int64_t>(i) * per);
  }
  return batch;
}

// Distinct stream tags for the per-epoch generators.
inline constexpr std::uint64_t kShuffleStream = 0x73687566ull;
inline constexpr std::uint64_t kAugmentStream = 0x6175676dull;

template <typename S>
std::string nonfinite_param_report(const Model<S>& m) {
  std::string out;
  for (const auto& p : m.params) {
    if (!as_array(p.value).isFinite().all()) out += " " + p.name;
  }
  return out.empty() ? " (all parameters finite)" : out;
}

}  // namespace detail

template <typename S>
struct EvalResult {
  ConfusionMatrix cm{1};
  double aca = 0;
  double macro_f1 = 0;
  double auc = 0;
  MulticlassAucResult auc_detail;
  std::vector<double> probabilities;  // N x K row-major, test order
  std::vector<int> labels;
};

/// Scores a dataset without augmentation: confusion matrix, ACA, macro-F1
/// and macro one-vs-rest AUC from the softmax probabilities.
template <typename S>
EvalResult<S> evaluate(const Model<S>& model, const TensorDataset<S>& ds, int batch_size) {
  if (ds.size() == 0) throw ConfigError("evaluation dataset is empty");
  const int k = model.cfg.num_classes;
  EvalResult<S> res;
  res.cm = ConfusionMatrix(k);
  res.labels = ds.labels;
  res.probabilities.reserve(ds.size() * static_cast<std::size_t>(k));
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<S>> chunk(ds.images.begin() + static_cast<std::ptrdiff_t>(start),
                                 ds.images.begin() + static_cast<std::ptrdiff_t>(end));
    Tensor<S> batch = detail::stack_images(chunk);
    Graph<S> g(false);
    ModelOutput<S> out = model.forward(g, batch);
    Tensor<S> probs = softmax(g, out.logits, 1);
    for (std::size_t i = 0; i < end - start; ++i) {
      const S* row = probs.data() + static_cast<std::int64_t>(i) * k;
      int argmax = 0;
      for (int j = 1; j < k; ++j) {
        if (row[j] > row[argmax]) argmax = j;
      }
      res.cm.add(ds.labels[start + i], argmax);
      for (int j = 0; j < k; ++j) res.probabilities.push_back(static_cast<double>(row[j]));
    }
  }
  res.aca = aca(res.cm);
  res.macro_f1 = macro_f1(res.cm);
  res.auc_detail = multiclass_auc(res.probabilities, res.labels, k);
  res.auc = res.auc_detail.macro_auc;
  return res;
}

/// Feature matrix (one row per sample, dataset order) for the scatter export.
template <typename S>
std::vector<std::vector<double>> export_features(const Model<S>& model,
                                                 const TensorDataset<S>& ds, int batch_size) {
  std::vector<std::vector<double>> rows;
  rows.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<S>> chunk(ds.images.begin() + static_cast<std::ptrdiff_t>(start),
                                 ds.images.begin() + static_cast<std::ptrdiff_t>(end));
    Graph<S> g(false);
    ModelOutput<S> out = model.forward(g, detail::stack_images(chunk));
    const std::int64_t d = out.features.dim(1);
    for (std::size_t i = 0; i < end - start; ++i) {
      std::vector<double> row(static_cast<std::size_t>(d));
      for (std::int64_t j = 0; j < d; ++j) {
        row[static_cast<std::size_t>(j)] =
            static_cast<double>(out.features.data()[static_cast<std::int64_t>(i) * d + j]);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Trains until `opts.epochs` epochs are complete, starting from
/// `resume` when given. Per-epoch RNG streams are derived from
/// (seed, epoch), so an interrupted run resumed from a checkpoint follows
/// the exact trajectory of an uninterrupted one.
template <typename S>
TrainResult<S> train(Model<S>& model, const TensorDataset<S>& train_set,
                     const TensorDataset<S>& test_set, const TrainOptions& opts,
                     const TrainState<S>* resume = nullptr) {
  opts.sgd.validate_or_throw();
  if (opts.lambda < 0) throw ConfigError("lambda must be nonnegative");
  if (train_set.size() == 0) throw ConfigError("training dataset is empty");
  const int k = model.cfg.num_classes;

  // Class weights per the total/count rule; every class must be present.
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (int y : train_set.labels) {
    if (y < 0 || y >= k) throw ConfigError("training label " + std::to_string(y) + " outside range");
    ++counts[static_cast<std::size_t>(y)];
  }
  HybridLossConfig loss_cfg;
  loss_cfg.lambda = opts.lambda;
  loss_cfg.class_weights = ClassWeights::from_counts(counts);

  TrainResult<S> res;
  if (resume) {
    res.state = *resume;
  } else {
    res.state.seed = opts.seed;
    res.state.sgd = SgdState<S>::for_model(model);
    res.state.centers =
        ClassCenters<S>::zeros(k, model.cfg.feature_dim_effective(), opts.center_alpha);
  }

  if (res.state.epoch >= opts.epochs) {
    // Nothing to train: report the current model's metrics only.
    EvalResult<S> ev = evaluate(model, test_set, opts.sgd.batch_size);
    res.history.push_back({res.state.epoch, std::numeric_limits<double>::quiet_NaN(), ev.aca,
                           ev.macro_f1, ev.auc});
    return res;
  }

  for (int epoch = res.state.epoch + 1; epoch <= opts.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(Rng::mix(opts.seed, detail::kShuffleStream),
                             static_cast<std::uint64_t>(epoch)));
    Rng augment_rng(Rng::mix(Rng::mix(Rng::mix(opts.seed, detail::kAugmentStream),
                                      opts.augment.stream_id),
                             static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opts.sgd.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(opts.sgd.batch_size));
      std::vector<Tensor<S>> chunk;
      std::vector<int> labels;
      chunk.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        chunk.push_back(augment(train_set.images[order[i]], opts.augment, augment_rng));
        labels.push_back(train_set.labels[order[i]]);
      }
      Tensor<S> batch = detail::stack_images(chunk);

      model.zero_grad();
      Graph<S> g;
      ModelOutput<S> out = model.forward(g, batch);
      HybridLoss<S> hl =
          hybrid_loss(g, out.logits, out.features, labels, loss_cfg, res.state.centers);
      const double loss_value = static_cast<double>(hl.total.data()[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("loss is non-finite at global step " +
                           std::to_string(res.state.global_step) + " (epoch " +
                           std::to_string(epoch) + "); non-finite parameters:" +
                           detail::nonfinite_param_report(model));
      }
      g.backward(hl.total);
      sgd_step(model, res.state.sgd, opts.sgd);
      update_centers(out.features, labels, res.state.centers);
      ++res.state.global_step;
      epoch_loss += loss_value * static_cast<double>(end - start);
    }
    epoch_loss /= static_cast<double>(order.size());

    EvalResult<S> ev = evaluate(model, test_set, opts.sgd.batch_size);
    res.history.push_back({epoch, epoch_loss, ev.aca, ev.macro_f1, ev.auc});
    if (opts.on_epoch) opts.on_epoch(res.history.back());
    res.state.epoch = epoch;
    if (ev.aca > res.state.best_metric) {
      res.state.best_metric = ev.aca;
      res.state.best_epoch = epoch;
    }

    if (!opts.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", epoch);
      save_checkpoint(opts.checkpoint_dir / name, model, res.state);
      if (res.state.best_epoch == epoch) {
        save_checkpoint(opts.checkpoint_dir / "best", model, res.state);
      }
    }
  }
  return res;
}

}  // namespace seanet
