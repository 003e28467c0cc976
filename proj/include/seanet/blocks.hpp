#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "seanet/graph.hpp"
#include "seanet/ops.hpp"
#include "seanet/tensor.hpp"

// Architectural units: the residual backbone stand-in, the spatial Attention
// Net built from 1x1 convolutions, squeeze-and-excitation channel
// recalibration, and their assembly into the four placement variants.

namespace seanet {

/// Position of SE blocks relative to the attention convolutions.
enum class Placement { AT, SE_AT, AT_SE, SEA };

inline const char* to_string(Placement p) {
  switch (p) {
    case Placement::AT: return "at";
    case Placement::SE_AT: return "se-at";
    case Placement::AT_SE: return "at-se";
    case Placement::SEA: return "sea";
  }
  return "?";
}

inline Placement placement_from_string(const std::string& s) {
  if (s == "at") return Placement::AT;
  if (s == "se-at") return Placement::SE_AT;
  if (s == "at-se") return Placement::AT_SE;
  if (s == "sea") return Placement::SEA;
  throw ConfigError("unknown placement '" + s + "' (expected at, se-at, at-se or sea)");
}

/// Weights of one SE block. w2 is the first FC layer (C -> C/r), w1 the
/// second (C/r -> C), both stored input-major so rows of a batch multiply
/// from the left. No biases.
template <typename S>
struct SeBlockParams {
  Tensor<S> w1;  // [(C/r) x C]
  Tensor<S> w2;  // [C x (C/r)]
  int reduction = 4;

  std::int64_t channels() const { return w2.dim(0); }
  std::int64_t bottleneck() const { return w2.dim(1); }
};

/// Gate each channel of g by a sigmoid of the squeezed-and-excited channel
/// descriptor: z = GAP(g), zhat = w1(relu(w2 z)), out_c = sigmoid(zhat_c) * g_c.
template <typename S>
Tensor<S> se_forward(Graph<S>& g, const Tensor<S>& x, const SeBlockParams<S>& p) {
  detail::check_rank(x, 4, "se_forward");
  const std::int64_t n = x.dim(0), c = x.dim(3);
  if (p.channels() != c) {
    throw ShapeError("se_forward channel mismatch: input " + x.shape().str() + " vs block C=" +
                     std::to_string(p.channels()));
  }
  if (p.w1.dim(0) != p.bottleneck() || p.w1.dim(1) != c) {
    throw ShapeError("se_forward inconsistent block weights " + p.w1.shape().str() + " / " +
                     p.w2.shape().str());
  }
  Tensor<S> z = reshape(g, global_avg_pool(g, x), Shape{n, c});
  Tensor<S> hidden = relu(g, matmul(g, z, p.w2));
  Tensor<S> gate = sigmoid(g, matmul(g, hidden, p.w1));
  return mul(g, x, reshape(g, gate, Shape{n, 1, 1, c}));
}

/// The attention convolutions F_atten = [c_1 .. c_n]; each is a 1x1 conv
/// followed by ReLU. The last layer emits the backbone channel count so the
/// pooled division against GAP(U) is shape-valid.
template <typename S>
struct AttentionNetParams {
  struct Layer {
    Tensor<S> w;  // [Cin x Cout]
    Tensor<S> b;  // [Cout]
  };
  std::vector<Layer> convs;

  std::size_t depth() const { return convs.size(); }
};

template <typename S>
struct AttentionOutput {
  Tensor<S> attended;  // [N,H,W,C] refined map gated by the attention distribution
  Tensor<S> features;  // [N,C] pooled attended map
};

/// Refine u through the attention convolutions with SE blocks injected per
/// placement, form the channel attention distribution
/// s = softmax(GAP(A) / GAP(U)), and gate A by s.
template <typename S>
AttentionOutput<S> attention_forward(Graph<S>& g, const Tensor<S>& u,
                                     const AttentionNetParams<S>& p, Placement placement,
                                     const std::vector<SeBlockParams<S>>& se) {
  detail::check_rank(u, 4, "attention_forward");
  const std::int64_t n = u.dim(0), c = u.dim(3);
  const std::size_t want_se = placement == Placement::AT    ? 0
                              : placement == Placement::SEA ? p.depth()
                                                            : 1;
  if (se.size() != want_se) {
    throw ShapeError("placement " + std::string(to_string(placement)) + " needs " +
                     std::to_string(want_se) + " SE blocks, got " + std::to_string(se.size()));
  }
  if (p.depth() == 0) throw ShapeError("attention net needs at least one conv layer");
  if (p.convs.front().w.dim(0) != c) {
    throw ShapeError("attention net consumes " + std::to_string(p.convs.front().w.dim(0)) +
                     " channels but backbone emits " + std::to_string(c));
  }
  if (p.convs.back().w.dim(1) != c) {
    throw ShapeError("attention net must emit the backbone channel count " + std::to_string(c));
  }

  Tensor<S> a = u;
  if (placement == Placement::SE_AT) a = se_forward(g, a, se[0]);
  for (std::size_t i = 0; i < p.convs.size(); ++i) {
    a = relu(g, conv1x1(g, a, p.convs[i].w, p.convs[i].b));
    if (placement == Placement::SEA) a = se_forward(g, a, se[i]);
  }
  if (placement == Placement::AT_SE) a = se_forward(g, a, se[0]);

  Tensor<S> pooled_refined = global_avg_pool(g, a);
  Tensor<S> pooled_raw = global_avg_pool(g, u);
  Tensor<S> s = softmax(g, div(g, pooled_refined, pooled_raw), 3);
  Tensor<S> attended = mul(g, a, s);
  Tensor<S> features = reshape(g, global_avg_pool(g, attended), Shape{n, c});
  return {std::move(attended), std::move(features)};
}

/// Affine map from pooled features to class logits.
template <typename S>
Tensor<S> classifier_head(Graph<S>& g, const Tensor<S>& features, const Tensor<S>& w,
                          const Tensor<S>& b) {
  return add(g, matmul(g, features, w), b);
}

/// Residual feature extractor: each stage is one strided 3x3 transition conv
/// followed by a residual block of two 3x3 convs with an identity shortcut.
template <typename S>
struct BackboneParams {
  struct Stage {
    Tensor<S> trans_w, trans_b;  // [3,3,Cin,Cout], [Cout]
    std::int64_t stride = 1;
    Tensor<S> res_w1, res_b1;  // [3,3,C,C], [C]
    Tensor<S> res_w2, res_b2;
  };
  std::vector<Stage> stages;
  bool frozen = false;
};

template <typename S>
Tensor<S> backbone_forward(Graph<S>& g, const Tensor<S>& image, const BackboneParams<S>& p) {
  detail::check_rank(image, 4, "backbone_forward");
  Tensor<S> x = image;
  for (const auto& st : p.stages) {
    x = relu(g, conv3x3(g, x, st.trans_w, st.trans_b, st.stride));
    Tensor<S> t = relu(g, conv3x3(g, x, st.res_w1, st.res_b1, 1));
    t = conv3x3(g, t, st.res_w2, st.res_b2, 1);
    x = relu(g, add(g, t, x));
  }
  if (x.dim(1) < 2 || x.dim(2) < 2) {
    throw ShapeError("backbone output " + x.shape().str() +
                     " too small: pooling needs at least 2x2 spatial extent");
  }
  return x;
}

/// Everything needed to build a model deterministically.
struct ModelConfig {
  int num_classes = 5;
  int in_channels = 3;
  std::vector<int> backbone_channels{16, 32, 32};
  std::vector<int> backbone_strides{2, 2, 2};
  bool freeze_backbone = false;
  std::vector<int> attention_channels{32, 32};  // output width per 1x1 conv layer
  Placement placement = Placement::SEA;
  int se_reduction = 4;
  int feature_dim = 0;  // 0: use the pooled C-dim features directly

  int backbone_out_channels() const {
    return backbone_channels.empty() ? 0 : backbone_channels.back();
  }

  std::int64_t feature_dim_effective() const {
    return feature_dim > 0 ? feature_dim : backbone_out_channels();
  }

  int se_block_count() const {
    switch (placement) {
      case Placement::AT: return 0;
      case Placement::SE_AT:
      case Placement::AT_SE: return 1;
      case Placement::SEA: return static_cast<int>(attention_channels.size());
    }
    return 0;
  }

  /// All problems reported in one pass.
  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (num_classes < 2) errs.push_back("num_classes must be >= 2");
    if (in_channels < 1) errs.push_back("in_channels must be >= 1");
    if (backbone_channels.empty()) errs.push_back("backbone_channels must be nonempty");
    if (backbone_strides.size() != backbone_channels.size()) {
      errs.push_back("backbone_strides and backbone_channels must have equal length");
    }
    for (int ch : backbone_channels) {
      if (ch < 1) errs.push_back("backbone channel widths must be positive");
    }
    for (int s : backbone_strides) {
      if (s != 1 && s != 2) errs.push_back("backbone strides must be 1 or 2");
    }
    if (attention_channels.empty()) errs.push_back("attention_channels must be nonempty");
    for (int ch : attention_channels) {
      if (ch < 1) errs.push_back("attention channel widths must be positive");
    }
    if (!attention_channels.empty() && !backbone_channels.empty() &&
        attention_channels.back() != backbone_channels.back()) {
      errs.push_back("last attention width must equal the backbone output channels");
    }
    if (se_reduction < 1) errs.push_back("se_reduction must be >= 1");
    // Every channel width an SE block gates must be divisible by r.
    std::vector<int> gated;
    switch (placement) {
      case Placement::AT: break;
      case Placement::SE_AT:
      case Placement::AT_SE:
        gated.push_back(backbone_out_channels());
        break;
      case Placement::SEA:
        gated = attention_channels;
        break;
    }
    for (int ch : gated) {
      if (se_reduction >= 1 && ch % se_reduction != 0) {
        errs.push_back("SE-gated width " + std::to_string(ch) + " not divisible by reduction " +
                       std::to_string(se_reduction));
      }
    }
    if (feature_dim < 0) errs.push_back("feature_dim must be >= 0");
    return errs;
  }

  void validate_or_throw() const {
    auto errs = validate();
    if (errs.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  bool operator==(const ModelConfig& o) const {
    return num_classes == o.num_classes && in_channels == o.in_channels &&
           backbone_channels == o.backbone_channels && backbone_strides == o.backbone_strides &&
           freeze_backbone == o.freeze_backbone && attention_channels == o.attention_channels &&
           placement == o.placement && se_reduction == o.se_reduction &&
           feature_dim == o.feature_dim;
  }
};

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> value;
  bool frozen = false;
};

template <typename S>
struct ModelOutput {
  Tensor<S> logits;    // [N, K]
  Tensor<S> features;  // [N, D] input of the center loss
};

/// The assembled network. Structured views (backbone, attention, ...) share
/// storage with the flat parameter list, so optimizer updates through
/// `params` are visible everywhere. One forward/backward in flight per
/// instance; clone for concurrent evaluation.
template <typename S>
struct Model {
  ModelConfig cfg;
  BackboneParams<S> backbone;
  AttentionNetParams<S> attention;
  std::vector<SeBlockParams<S>> se_blocks;
  Tensor<S> feature_w, feature_b;  // engaged when cfg.feature_dim > 0
  Tensor<S> head_w, head_b;
  std::vector<NamedParam<S>> params;

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }

  const NamedParam<S>* find(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params) {
      if (!p.frozen) p.value.zero_grad();
    }
  }

  ModelOutput<S> forward(Graph<S>& g, const Tensor<S>& image) const {
    Tensor<S> u = backbone_forward(g, image, backbone);
    AttentionOutput<S> at = attention_forward(g, u, attention, cfg.placement, se_blocks);
    Tensor<S> feat = at.features;
    if (cfg.feature_dim > 0) {
      feat = add(g, matmul(g, feat, feature_w), feature_b);
    }
    Tensor<S> logits = classifier_head(g, feat, head_w, head_b);
    return {std::move(logits), std::move(feat)};
  }

  Model clone() const {
    Model m;
    m.cfg = cfg;
    m.params.reserve(params.size());
    for (const auto& p : params) m.params.push_back({p.name, p.value.clone(), p.frozen});
    m.rebuild_views();
    return m;
  }

  /// Reattaches the structured views onto the flat parameter list. Relies on
  /// the canonical registration order of build_model.
  void rebuild_views() {
    std::size_t i = 0;
    auto next = [&]() -> Tensor<S>& { return params.at(i++).value; };
    backbone.stages.clear();
    backbone.frozen = cfg.freeze_backbone;
    for (std::size_t s = 0; s < cfg.backbone_channels.size(); ++s) {
      typename BackboneParams<S>::Stage st;
      st.trans_w = next();
      st.trans_b = next();
      st.stride = cfg.backbone_strides[s];
      st.res_w1 = next();
      st.res_b1 = next();
      st.res_w2 = next();
      st.res_b2 = next();
      backbone.stages.push_back(std::move(st));
    }
    attention.convs.clear();
    for (std::size_t l = 0; l < cfg.attention_channels.size(); ++l) {
      typename AttentionNetParams<S>::Layer layer;
      layer.w = next();
      layer.b = next();
      attention.convs.push_back(std::move(layer));
    }
    se_blocks.clear();
    for (int b = 0; b < cfg.se_block_count(); ++b) {
      SeBlockParams<S> se;
      se.reduction = cfg.se_reduction;
      se.w2 = next();
      se.w1 = next();
      se_blocks.push_back(std::move(se));
    }
    if (cfg.feature_dim > 0) {
      feature_w = next();
      feature_b = next();
    }
    head_w = next();
    head_b = next();
    if (i != params.size()) throw IncompatibleError("parameter list does not match config");
  }
};

namespace detail {

template <typename S>
Tensor<S> he_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  Tensor<S> t(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  fill_uniform(t, rng, -limit, limit);
  return t;
}

}  // namespace detail

/// Builds and initializes a model: He-uniform fan-in weights, zero biases,
/// deterministic for a given seed. Frozen backbone parameters keep
/// requires_grad off so the tape skips them entirely.
template <typename S>
Model<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate_or_throw();
  Rng rng(Rng::mix(seed, 0x6d6f64656cull));  // distinct stream per purpose
  Model<S> m;
  m.cfg = cfg;
  const bool bb_trainable = !cfg.freeze_backbone;

  auto reg = [&m](const std::string& name, Tensor<S> t, bool trainable) {
    t.set_requires_grad(trainable);
    m.params.push_back({name, std::move(t), !trainable});
  };

  int cin = cfg.in_channels;
  for (std::size_t s = 0; s < cfg.backbone_channels.size(); ++s) {
    const int c = cfg.backbone_channels[s];
    const std::string base = "backbone.stage" + std::to_string(s);
    reg(base + ".trans.w", detail::he_uniform<S>(Shape{3, 3, cin, c}, 9 * cin, rng),
        bb_trainable);
    reg(base + ".trans.b", Tensor<S>(Shape{c}), bb_trainable);
    reg(base + ".res.w1", detail::he_uniform<S>(Shape{3, 3, c, c}, 9 * c, rng), bb_trainable);
    reg(base + ".res.b1", Tensor<S>(Shape{c}), bb_trainable);
    reg(base + ".res.w2", detail::he_uniform<S>(Shape{3, 3, c, c}, 9 * c, rng), bb_trainable);
    reg(base + ".res.b2", Tensor<S>(Shape{c}), bb_trainable);
    cin = c;
  }
  // Attention convs start at identity plus a small perturbation, so the
  // refined map initially equals the backbone map and the attention
  // distribution sits at its uniform fixed point. A fully random init puts
  // the pooled ratio spread orders of magnitude wide, which saturates the
  // softmax immediately and destabilizes the division's backward pass.
  int ain = cfg.backbone_out_channels();
  for (std::size_t l = 0; l < cfg.attention_channels.size(); ++l) {
    const int c = cfg.attention_channels[l];
    const std::string base = "attention.conv" + std::to_string(l);
    Tensor<S> w(Shape{ain, c});
    const double limit = 0.05 * std::sqrt(6.0 / ain);
    fill_uniform(w, rng, -limit, limit);
    for (int d = 0; d < std::min(ain, c); ++d) w.at({d, d}) += S(1);
    reg(base + ".w", std::move(w), true);
    reg(base + ".b", Tensor<S>(Shape{c}), true);
    ain = c;
  }
  // SE blocks gate: SE_AT/AT_SE the backbone output, SEA each conv output.
  std::vector<int> gated;
  if (cfg.placement == Placement::SE_AT || cfg.placement == Placement::AT_SE) {
    gated.push_back(cfg.backbone_out_channels());
  } else if (cfg.placement == Placement::SEA) {
    gated = cfg.attention_channels;
  }
  for (std::size_t b = 0; b < gated.size(); ++b) {
    const int c = gated[b];
    const int mid = c / cfg.se_reduction;
    const std::string base = "se." + std::to_string(b);
    reg(base + ".w2", detail::he_uniform<S>(Shape{c, mid}, c, rng), true);
    reg(base + ".w1", detail::he_uniform<S>(Shape{mid, c}, mid, rng), true);
  }
  if (cfg.feature_dim > 0) {
    const int c = cfg.backbone_out_channels();
    reg("feature.w", detail::he_uniform<S>(Shape{c, cfg.feature_dim}, c, rng), true);
    reg("feature.b", Tensor<S>(Shape{cfg.feature_dim}), true);
  }
  const std::int64_t fd = cfg.feature_dim_effective();
  reg("head.w", detail::he_uniform<S>(Shape{fd, cfg.num_classes}, fd, rng), true);
  reg("head.b", Tensor<S>(Shape{cfg.num_classes}), true);

  m.rebuild_views();
  return m;
}

}  // namespace seanet
