#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "seanet/blocks.hpp"
#include "seanet/losses.hpp"

// Central finite-difference verification of the reverse-mode gradients.
// The finite-difference side only re-evaluates the forward pass, so it stays
// independent of every backward rule it checks.

namespace seanet {

struct GradCheckRow {
  std::string group;
  double max_rel_err = 0;
  std::int64_t checked = 0;
};

/// |a - b| relative to the larger magnitude, floored so near-zero pairs are
/// compared absolutely at 1e-2 scale.
inline double grad_rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-2});
  return std::abs(a - b) / denom;
}

/// Compares the gradient buffers of `params` (filled by a prior backward)
/// against central differences of `loss_fn`, which must re-evaluate the loss
/// using the tensors' current values.
template <typename LossFn>
std::vector<GradCheckRow> finite_difference_check(
    std::vector<std::pair<std::string, Tensor<double>>> params, LossFn&& loss_fn,
    double step = 1e-5) {
  std::vector<GradCheckRow> rows;
  for (auto& [name, p] : params) {
    GradCheckRow row{name, 0.0, p.numel()};
    const auto grad = p.grad();
    double* data = p.data();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      const double keep = data[i];
      data[i] = keep + step;
      const double lp = loss_fn();
      data[i] = keep - step;
      const double lm = loss_fn();
      data[i] = keep;
      const double fd = (lp - lm) / (2 * step);
      row.max_rel_err =
          std::max(row.max_rel_err, grad_rel_err(grad[static_cast<std::size_t>(i)], fd));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Full-model gradient check: one recorded forward/backward for the autodiff
/// side, then finite differences of the hybrid loss over every trainable
/// parameter group.
inline std::vector<GradCheckRow> check_model_gradients(Model<double>& model,
                                                       const Tensor<double>& images,
                                                       const std::vector<int>& labels,
                                                       const HybridLossConfig& loss_cfg,
                                                       const ClassCenters<double>& centers,
                                                       double step = 1e-5) {
  model.zero_grad();
  {
    Graph<double> g;
    ModelOutput<double> out = model.forward(g, images);
    HybridLoss<double> loss = hybrid_loss(g, out.logits, out.features, labels, loss_cfg, centers);
    g.backward(loss.total);
  }
  auto loss_fn = [&]() {
    Graph<double> g(false);
    ModelOutput<double> out = model.forward(g, images);
    return static_cast<double>(
        hybrid_loss(g, out.logits, out.features, labels, loss_cfg, centers).total.data()[0]);
  };
  std::vector<std::pair<std::string, Tensor<double>>> groups;
  for (auto& p : model.params) {
    if (!p.frozen) groups.emplace_back(p.name, p.value);
  }
  return finite_difference_check(std::move(groups), loss_fn, step);
}

}  // namespace seanet
