#pragma once

// Independent reference implementations used as test oracles. These stay on
// plain loops and never call into the op kernels they verify.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "seanet/gradcheck.hpp"
#include "seanet/graph.hpp"
#include "seanet/tensor.hpp"

namespace oracles {

using seanet::Graph;
using seanet::Rng;
using seanet::Shape;
using seanet::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(shape);
  seanet::fill_uniform(t, rng, lo, hi);
  return t;
}

/// Triple-loop matrix product.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::int64_t n, std::int64_t k, std::int64_t m) {
  std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0;
      for (std::int64_t t = 0; t < k; ++t) {
        acc += a[static_cast<std::size_t>(i * k + t)] * b[static_cast<std::size_t>(t * m + j)];
      }
      out[static_cast<std::size_t>(i * m + j)] = acc;
    }
  }
  return out;
}

/// Reshape-to-matrix oracle for the pointwise convolution: flattens NHWC to
/// (N*H*W) x Cin, multiplies, adds bias.
inline std::vector<double> conv1x1_reshape_oracle(const Tensor<double>& x,
                                                  const Tensor<double>& w,
                                                  const Tensor<double>& b) {
  const std::int64_t p = x.dim(0) * x.dim(1) * x.dim(2);
  const std::int64_t ci = x.dim(3), co = w.dim(1);
  std::vector<double> out = naive_matmul({x.data(), x.data() + x.numel()},
                                         {w.data(), w.data() + w.numel()}, p, ci, co);
  for (std::int64_t i = 0; i < p; ++i) {
    for (std::int64_t j = 0; j < co; ++j) out[static_cast<std::size_t>(i * co + j)] += b.data()[j];
  }
  return out;
}

/// Direct seven-loop 3x3 convolution, zero padding 1.
inline std::vector<double> conv3x3_direct_oracle(const Tensor<double>& x,
                                                 const Tensor<double>& w,
                                                 const Tensor<double>& b, std::int64_t stride) {
  const std::int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::int64_t co = w.dim(3);
  const std::int64_t ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * ho * wo * co), 0.0);
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
          double acc = b.data()[oc];
          for (std::int64_t ky = 0; ky < 3; ++ky) {
            for (std::int64_t kx = 0; kx < 3; ++kx) {
              const std::int64_t iy = oy * stride + ky - 1;
              const std::int64_t ix = ox * stride + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              for (std::int64_t ic = 0; ic < ci; ++ic) {
                acc += x.data()[((in * h + iy) * wd + ix) * ci + ic] *
                       w.data()[((ky * 3 + kx) * ci + ic) * co + oc];
              }
            }
          }
          out[static_cast<std::size_t>(((in * ho + oy) * wo + ox) * co + oc)] = acc;
        }
      }
    }
  }
  return out;
}

/// Rank statistic P(score+ > score-) + P(tie)/2 over all pairs.
inline double pairwise_auc_oracle(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  double wins = 0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Runs `fwd` once on a recording graph, backprops the scalar it returns,
/// then compares every parameter gradient against central differences of
/// re-running `fwd` on non-recording graphs. Returns the worst relative
/// error over all parameters.
inline double max_grad_rel_err(const std::function<Tensor<double>(Graph<double>&)>& fwd,
                               std::vector<Tensor<double>> params, double step = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Graph<double> g;
    Tensor<double> loss = fwd(g);
    g.backward(loss);
  }
  auto loss_fn = [&]() {
    Graph<double> g(false);
    return fwd(g).data()[0];
  };
  std::vector<std::pair<std::string, Tensor<double>>> groups;
  for (std::size_t i = 0; i < params.size(); ++i) {
    groups.emplace_back("p" + std::to_string(i), params[i]);
  }
  double worst = 0;
  for (const auto& row : seanet::finite_difference_check(std::move(groups), loss_fn, step)) {
    worst = std::max(worst, row.max_rel_err);
  }
  return worst;
}

}  // namespace oracles
