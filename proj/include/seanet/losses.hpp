#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "seanet/graph.hpp"
#include "seanet/ops.hpp"
#include "seanet/tensor.hpp"

// Class-imbalance weighted cross-entropy, center loss, the per-class weight
// rule and the hybrid combination L = L_ce + lambda * L_ct.

namespace seanet {

/// Per-class rescaling weights: weight_k = total / count_k, so minority
/// classes get proportionally larger weights.
struct ClassWeights {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
  std::vector<double> weights;

  static ClassWeights from_counts(std::vector<std::int64_t> counts) {
    ClassWeights w;
    w.total = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (counts[k] < 1) {
        throw ConfigError("class " + std::to_string(k) + " has no training samples");
      }
      w.total += counts[k];
    }
    w.counts = std::move(counts);
    w.weights.reserve(w.counts.size());
    for (auto c : w.counts) {
      w.weights.push_back(static_cast<double>(w.total) / static_cast<double>(c));
    }
    return w;
  }

  /// Weights given directly instead of derived from counts (e.g. all ones
  /// for plain cross-entropy).
  static ClassWeights explicit_weights(std::vector<double> weights) {
    ClassWeights w;
    w.weights = std::move(weights);
    return w;
  }

  int num_classes() const { return static_cast<int>(weights.size()); }
};

/// One center per class in feature space, moved toward the batch features by
/// update_centers. Not part of the autodiff graph; the alpha step is applied
/// outside the optimizer.
template <typename S>
struct ClassCenters {
  Tensor<S> centers;  // [K, D]
  double alpha = 0.5;

  static ClassCenters zeros(int num_classes, std::int64_t feature_dim, double alpha = 0.5) {
    ClassCenters c;
    c.centers = Tensor<S>(Shape{num_classes, feature_dim});
    c.alpha = alpha;
    return c;
  }

  int num_classes() const { return static_cast<int>(centers.dim(0)); }
  std::int64_t feature_dim() const { return centers.dim(1); }
};

namespace detail {

inline void check_labels(const std::vector<int>& labels, std::int64_t n, int k, const char* op) {
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError(std::string(op) + ": got " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) +
                       " outside [0, " + std::to_string(k - 1) + "]");
    }
  }
}

}  // namespace detail

/// Mean over the batch of weight_y * (-log softmax(logits)[y]).
template <typename S>
Tensor<S> weighted_ce(Graph<S>& g, const Tensor<S>& logits, const std::vector<int>& labels,
                      const ClassWeights& w) {
  detail::check_rank(logits, 2, "weighted_ce");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (w.num_classes() != k) {
    throw ShapeError("weighted_ce: " + std::to_string(w.num_classes()) + " class weights for " +
                     std::to_string(k) + " logits");
  }
  detail::check_labels(labels, n, static_cast<int>(k), "weighted_ce");

  // Row-stable log-sum-exp; probabilities are kept for the backward rule.
  Tensor<S> probs(Shape{n, k});
  S total = S(0);
  const S* lv = logits.data();
  S* pv = probs.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const S* row = lv + i * k;
    S mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S z = S(0);
    for (std::int64_t j = 0; j < k; ++j) {
      const S e = std::exp(row[j] - mx);
      pv[i * k + j] = e;
      z += e;
    }
    for (std::int64_t j = 0; j < k; ++j) pv[i * k + j] /= z;
    const S lse = mx + std::log(z);
    total += S(w.weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]) *
             (lse - row[labels[static_cast<std::size_t>(i)]]);
  }
  Tensor<S> out(Shape{1});
  out.data()[0] = total / S(n);
  require_finite(out, "weighted_ce");
  if (!g.recording()) return out;
  const auto il = g.track(logits);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(il)) {
    fn = [il, probs, labels, weights = w.weights, n, k](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dl = gg.grad_of(il);
      const S* pvv = probs.data();
      const S gscale = go[0] / S(n);
      for (std::int64_t i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const S wy = S(weights[static_cast<std::size_t>(y)]);
        for (std::int64_t j = 0; j < k; ++j) {
          S d = pvv[i * k + j];
          if (j == y) d -= S(1);
          dl[static_cast<std::size_t>(i * k + j)] += gscale * wy * d;
        }
      }
    };
  }
  return g.emit(std::move(out), {il}, std::move(fn));
}

/// Half the summed squared distance between each feature row and its class
/// center: (1/2) * sum_i ||x_i - c_{y_i}||^2. Centers are constants here;
/// the gradient w.r.t. features is exactly (x_i - c_{y_i}).
template <typename S>
Tensor<S> center_loss(Graph<S>& g, const Tensor<S>& features, const std::vector<int>& labels,
                      const ClassCenters<S>& centers) {
  detail::check_rank(features, 2, "center_loss");
  const std::int64_t n = features.dim(0), d = features.dim(1);
  if (centers.feature_dim() != d) {
    throw ShapeError("center_loss: feature dim " + std::to_string(d) +
                     " does not match centers " + centers.centers.shape().str());
  }
  detail::check_labels(labels, n, centers.num_classes(), "center_loss");
  const S* fv = features.data();
  const S* cv = centers.centers.data();
  S total = S(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const S* c = cv + labels[static_cast<std::size_t>(i)] * d;
    for (std::int64_t j = 0; j < d; ++j) {
      const S diff = fv[i * d + j] - c[j];
      total += diff * diff;
    }
  }
  Tensor<S> out(Shape{1});
  out.data()[0] = total / S(2);
  require_finite(out, "center_loss");
  if (!g.recording()) return out;
  const auto iff = g.track(features);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(iff)) {
    fn = [iff, features, labels, c = centers.centers, n, d](Graph<S>& gg,
                                                            const AlignedVec<S>& go) {
      auto& df = gg.grad_of(iff);
      const S* fvv = features.data();
      const S* cvv = c.data();
      for (std::int64_t i = 0; i < n; ++i) {
        const S* cr = cvv + labels[static_cast<std::size_t>(i)] * d;
        for (std::int64_t j = 0; j < d; ++j) {
          df[static_cast<std::size_t>(i * d + j)] += go[0] * (fvv[i * d + j] - cr[j]);
        }
      }
    };
  }
  return g.emit(std::move(out), {iff}, std::move(fn));
}

/// Center update rule: c_k <- c_k - alpha * sum_{i: y_i = k}(c_k - x_i) / (1 + n_k).
/// Classes absent from the batch keep their centers. Operates on detached
/// feature values; call after backward, serialized with training steps.
template <typename S>
void update_centers(const Tensor<S>& features, const std::vector<int>& labels,
                    ClassCenters<S>& centers) {
  const std::int64_t n = features.dim(0), d = features.dim(1);
  if (centers.feature_dim() != d) {
    throw ShapeError("update_centers: feature dim mismatch");
  }
  detail::check_labels(labels, n, centers.num_classes(), "update_centers");
  const int k = centers.num_classes();
  std::vector<S> delta(static_cast<std::size_t>(k) * d, S(0));
  std::vector<std::int64_t> batch_count(static_cast<std::size_t>(k), 0);
  const S* fv = features.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    ++batch_count[static_cast<std::size_t>(y)];
    S* dk = delta.data() + y * d;
    const S* ck = centers.centers.data() + y * d;
    for (std::int64_t j = 0; j < d; ++j) dk[j] += ck[j] - fv[i * d + j];
  }
  S* cv = centers.centers.data();
  for (int kk = 0; kk < k; ++kk) {
    const std::int64_t cnt = batch_count[static_cast<std::size_t>(kk)];
    if (cnt == 0) continue;
    const S step = S(centers.alpha) / S(1 + cnt);
    for (std::int64_t j = 0; j < d; ++j) {
      cv[kk * d + j] -= step * delta[static_cast<std::size_t>(kk * d + j)];
    }
  }
  require_finite(centers.centers, "update_centers");
}

struct HybridLossConfig {
  double lambda = 0.1;  // strength of the center term; 0 reduces to weighted CE
  ClassWeights class_weights;
};

template <typename S>
struct HybridLoss {
  Tensor<S> total;  // scalar node in the graph
  double ce = 0;    // component values for logging
  double ct = 0;
};

/// L = L_ce + lambda * L_ct. With lambda = 0 the center term is skipped and
/// the result is the weighted cross-entropy node itself.
template <typename S>
HybridLoss<S> hybrid_loss(Graph<S>& g, const Tensor<S>& logits, const Tensor<S>& features,
                          const std::vector<int>& labels, const HybridLossConfig& cfg,
                          const ClassCenters<S>& centers) {
  if (cfg.lambda < 0) throw ConfigError("hybrid loss lambda must be nonnegative");
  HybridLoss<S> out;
  Tensor<S> ce = weighted_ce(g, logits, labels, cfg.class_weights);
  out.ce = static_cast<double>(ce.data()[0]);
  if (cfg.lambda == 0) {
    out.total = std::move(ce);
    return out;
  }
  Tensor<S> ct = center_loss(g, features, labels, centers);
  out.ct = static_cast<double>(ct.data()[0]);
  out.total = add(g, ce, scale(g, ct, cfg.lambda));
  return out;
}

}  // namespace seanet
