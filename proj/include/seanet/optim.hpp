#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seanet/blocks.hpp"
#include "seanet/losses.hpp"
#include "seanet/tensor.hpp"

// SGD with momentum and coupled weight decay:
//   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
// Frozen parameters are never touched.

namespace seanet {

struct SgdConfig {
  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 1e-8;
  int batch_size = 20;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    // lr = 0 is allowed: it freezes every parameter, which the training
    // contract relies on.
    if (lr < 0) errs.push_back("lr must be >= 0");
    if (momentum < 0 || momentum >= 1) errs.push_back("momentum must be in [0, 1)");
    if (weight_decay < 0) errs.push_back("weight_decay must be >= 0");
    if (batch_size < 1) errs.push_back("batch_size must be >= 1");
    return errs;
  }

  void validate_or_throw() const {
    auto errs = validate();
    if (errs.empty()) return;
    std::string msg = "invalid optimizer config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
};

/// Per-parameter velocity buffers, index-parallel to Model::params.
/// Frozen entries stay empty.
template <typename S>
struct SgdState {
  std::vector<std::vector<S>> velocity;

  static SgdState for_model(const Model<S>& m) {
    SgdState st;
    st.velocity.resize(m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      if (!m.params[i].frozen) {
        st.velocity[i].assign(static_cast<std::size_t>(m.params[i].value.numel()), S(0));
      }
    }
    return st;
  }
};

/// One optimizer step over every trainable parameter. Requires gradients
/// from a completed backward pass; a missing gradient names the parameter.
template <typename S>
void sgd_step(Model<S>& model, SgdState<S>& state, const SgdConfig& cfg) {
  cfg.validate_or_throw();
  if (state.velocity.size() != model.params.size()) {
    throw GraphError("optimizer state does not match the model parameter list");
  }
  const S lr = S(cfg.lr);
  const S mom = S(cfg.momentum);
  const S wd = S(cfg.weight_decay);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    auto& p = model.params[i];
    if (p.frozen) continue;
    if (!p.value.has_grad()) {
      throw GraphError("missing gradient on trainable parameter '" + p.name +
                       "': run backward first");
    }
    auto grad = p.value.grad();
    auto& vel = state.velocity[i];
    S* v = vel.data();
    S* w = p.value.data();
    const std::int64_t n = p.value.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      v[j] = mom * v[j] + (grad[static_cast<std::size_t>(j)] + wd * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace seanet
