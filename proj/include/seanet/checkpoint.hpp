#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seanet/blocks.hpp"
#include "seanet/io.hpp"
#include "seanet/losses.hpp"
#include "seanet/optim.hpp"

// Checkpoints: a directory of SGT1 tensor files plus a plain-text manifest
// mapping parameter names to files and recording the model configuration.
// Training checkpoints additionally carry optimizer velocities, class
// centers and a state file; everything round-trips bit-exactly.

namespace seanet {

/// Epoch-level training state. Velocity buffers follow Model::params order.
template <typename S>
struct TrainState {
  int epoch = 0;
  std::int64_t global_step = 0;
  std::uint64_t seed = 0;
  SgdState<S> sgd;
  ClassCenters<S> centers;
  double best_metric = -1;
  int best_epoch = -1;
};

namespace detail {

inline std::string ints_to_text(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> ints_from_text(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(item));
  return out;
}

inline std::map<std::string, std::string> parse_kv_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return kv;
}

}  // namespace detail

inline std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "config.num_classes " << cfg.num_classes << "\n";
  out << "config.in_channels " << cfg.in_channels << "\n";
  out << "config.backbone_channels " << detail::ints_to_text(cfg.backbone_channels) << "\n";
  out << "config.backbone_strides " << detail::ints_to_text(cfg.backbone_strides) << "\n";
  out << "config.freeze_backbone " << (cfg.freeze_backbone ? 1 : 0) << "\n";
  out << "config.attention_channels " << detail::ints_to_text(cfg.attention_channels) << "\n";
  out << "config.placement " << to_string(cfg.placement) << "\n";
  out << "config.se_reduction " << cfg.se_reduction << "\n";
  out << "config.feature_dim " << cfg.feature_dim << "\n";
  return out.str();
}

inline ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto want = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find("config." + key);
    if (it == kv.end()) throw IncompatibleError("checkpoint manifest is missing config." + key);
    return it->second;
  };
  cfg.num_classes = std::stoi(want("num_classes"));
  cfg.in_channels = std::stoi(want("in_channels"));
  cfg.backbone_channels = detail::ints_from_text(want("backbone_channels"));
  cfg.backbone_strides = detail::ints_from_text(want("backbone_strides"));
  cfg.freeze_backbone = want("freeze_backbone") == "1";
  cfg.attention_channels = detail::ints_from_text(want("attention_channels"));
  cfg.placement = placement_from_string(want("placement"));
  cfg.se_reduction = std::stoi(want("se_reduction"));
  cfg.feature_dim = std::stoi(want("feature_dim"));
  return cfg;
}

template <typename S>
void save_model(const std::filesystem::path& dir, const Model<S>& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  std::ostringstream manifest;
  manifest << "format seanet-checkpoint-1\n";
  manifest << "precision " << (sizeof(S) == 4 ? "f32" : "f64") << "\n";
  manifest << model_config_to_text(m.cfg);
  for (const auto& p : m.params) {
    const std::string rel = "params/" + p.name + ".sgt1";
    write_tensor(dir / rel, p.value);
    manifest << "param " << p.name << " " << rel << " " << (p.frozen ? 1 : 0) << "\n";
  }
  write_text_file(dir / "manifest.txt", manifest.str());
}

inline std::string checkpoint_precision(const std::filesystem::path& dir) {
  const auto kv = detail::parse_kv_lines(read_text_file(dir / "manifest.txt"));
  auto it = kv.find("precision");
  if (it == kv.end()) throw IncompatibleError("checkpoint manifest has no precision entry");
  return it->second;
}

inline ModelConfig checkpoint_config(const std::filesystem::path& dir) {
  return model_config_from_kv(detail::parse_kv_lines(read_text_file(dir / "manifest.txt")));
}

/// Rebuilds the model from the manifest config and loads every tensor,
/// validating names and shapes against a freshly built skeleton.
template <typename S>
Model<S> load_model(const std::filesystem::path& dir) {
  const std::string text = read_text_file(dir / "manifest.txt");
  const auto kv = detail::parse_kv_lines(text);
  if (auto it = kv.find("format"); it == kv.end() || it->second != "seanet-checkpoint-1") {
    throw IncompatibleError(dir.string() + " is not a seanet checkpoint");
  }
  ModelConfig cfg = model_config_from_kv(kv);
  Model<S> m = build_model<S>(cfg, 0);

  std::map<std::string, std::pair<std::string, bool>> listed;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("param ", 0) != 0) continue;
    std::istringstream row(line);
    std::string tag, name, rel;
    int frozen = 0;
    row >> tag >> name >> rel >> frozen;
    listed[name] = {rel, frozen != 0};
  }
  for (auto& p : m.params) {
    auto it = listed.find(p.name);
    if (it == listed.end()) {
      throw IncompatibleError("checkpoint is missing parameter '" + p.name + "'");
    }
    Tensor<S> t = read_tensor<S>(dir / it->second.first);
    if (t.shape() != p.value.shape()) {
      throw IncompatibleError("checkpoint parameter '" + p.name + "' has shape " +
                              t.shape().str() + ", expected " + p.value.shape().str());
    }
    std::copy_n(t.data(), t.numel(), p.value.data());
  }
  if (listed.size() != m.params.size()) {
    throw IncompatibleError("checkpoint lists " + std::to_string(listed.size()) +
                            " parameters, model has " + std::to_string(m.params.size()));
  }
  return m;
}

template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const Model<S>& m,
                     const TrainState<S>& state) {
  namespace fs = std::filesystem;
  save_model(dir, m);
  fs::create_directories(dir / "velocity");
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].frozen) continue;
    const auto& vel = state.sgd.velocity[i];
    Tensor<S> t = Tensor<S>::from(Shape{static_cast<std::int64_t>(vel.size())},
                                  std::vector<S>(vel.begin(), vel.end()));
    write_tensor(dir / "velocity" / (m.params[i].name + ".sgt1"), t);
  }
  write_tensor(dir / "centers.sgt1", state.centers.centers);
  std::ostringstream st;
  st << "epoch " << state.epoch << "\n";
  st << "global_step " << state.global_step << "\n";
  st << "seed " << state.seed << "\n";
  st << "center_alpha " << fmt_g(state.centers.alpha) << "\n";
  st << "best_metric " << fmt_g(state.best_metric) << "\n";
  st << "best_epoch " << state.best_epoch << "\n";
  write_text_file(dir / "state.txt", st.str());
}

template <typename S>
TrainState<S> load_train_state(const std::filesystem::path& dir, const Model<S>& m) {
  TrainState<S> state;
  const auto kv = detail::parse_kv_lines(read_text_file(dir / "state.txt"));
  auto want = [&kv, &dir](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw IncompatibleError(dir.string() + "/state.txt is missing '" + key + "'");
    }
    return it->second;
  };
  state.epoch = std::stoi(want("epoch"));
  state.global_step = std::stoll(want("global_step"));
  state.seed = std::stoull(want("seed"));
  state.best_metric = std::stod(want("best_metric"));
  state.best_epoch = std::stoi(want("best_epoch"));
  state.sgd.velocity.resize(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].frozen) continue;
    Tensor<S> t = read_tensor<S>(dir / "velocity" / (m.params[i].name + ".sgt1"));
    if (t.numel() != m.params[i].value.numel()) {
      throw IncompatibleError("velocity buffer for '" + m.params[i].name +
                              "' does not match the parameter");
    }
    state.sgd.velocity[i].assign(t.data(), t.data() + t.numel());
  }
  state.centers.centers = read_tensor<S>(dir / "centers.sgt1");
  state.centers.alpha = std::stod(want("center_alpha"));
  return state;
}

}  // namespace seanet
