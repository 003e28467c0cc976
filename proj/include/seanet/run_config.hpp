#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seanet/blocks.hpp"
#include "seanet/losses.hpp"
#include "seanet/optim.hpp"
#include "seanet/pipeline.hpp"

namespace seanet {

/// Flat key = value run configuration. Every key has a default; unknown keys
/// are rejected. The effective config echoed into the run directory parses
/// back to an identical configuration.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  std::string placement = "sea";  // at | se-at | at-se | sea
  int classes = 5;
  int image_size = 64;
  std::vector<int> backbone_channels{16, 32, 32};
  std::vector<int> backbone_strides{2, 2, 2};
  bool freeze_backbone = false;
  std::vector<int> attention_channels{32, 32};
  int se_reduction = 4;
  int feature_dim = 0;
  double lambda = 0.1;
  double center_alpha = 0.5;
  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 1e-8;
  int batch_size = 20;
  int epochs = 30;
  double rotation_degrees = 10;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  int crop_threshold = 10;
  std::string data_dir;
  std::string out_dir;

  /// Applies one key; throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);

  /// Applies every "key = value" line of a config file.
  void load_file(const std::filesystem::path& path);

  /// Canonical flat listing of every key (fixed order).
  std::string echo() const;

  std::vector<std::string> validate() const;
  void validate_or_throw() const;

  ModelConfig model_config() const;
  SgdConfig sgd_config() const;
  AugmentPolicy augment_policy() const;
};

}  // namespace seanet
