#include "seanet/run_config.hpp"

#include <fstream>
#include <sstream>

namespace seanet {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer from '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number from '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(static_cast<int>(parse_int(key, trim(item))));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "precision") {
    if (value != "f32" && value != "f64") {
      throw ConfigError("config key 'precision': expected f32 or f64, got '" + value + "'");
    }
    precision = value;
  } else if (key == "placement") {
    placement_from_string(value);  // validates
    placement = value;
  } else if (key == "classes") {
    classes = static_cast<int>(parse_int(key, value));
  } else if (key == "image_size") {
    image_size = static_cast<int>(parse_int(key, value));
  } else if (key == "backbone_channels") {
    backbone_channels = parse_int_list(key, value);
  } else if (key == "backbone_strides") {
    backbone_strides = parse_int_list(key, value);
  } else if (key == "freeze_backbone") {
    freeze_backbone = parse_bool(key, value);
  } else if (key == "attention_channels") {
    attention_channels = parse_int_list(key, value);
  } else if (key == "se_reduction") {
    se_reduction = static_cast<int>(parse_int(key, value));
  } else if (key == "feature_dim") {
    feature_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "lambda") {
    lambda = parse_double(key, value);
  } else if (key == "center_alpha") {
    center_alpha = parse_double(key, value);
  } else if (key == "lr") {
    lr = parse_double(key, value);
  } else if (key == "momentum") {
    momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(key, value);
  } else if (key == "batch_size") {
    batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "epochs") {
    epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "rotation_degrees") {
    rotation_degrees = parse_double(key, value);
  } else if (key == "hflip_prob") {
    hflip_prob = parse_double(key, value);
  } else if (key == "vflip_prob") {
    vflip_prob = parse_double(key, value);
  } else if (key == "crop_threshold") {
    crop_threshold = static_cast<int>(parse_int(key, value));
  } else if (key == "data_dir") {
    data_dir = value;
  } else if (key == "out_dir") {
    out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  out << "seed = " << seed << "\n";
  out << "precision = " << precision << "\n";
  out << "placement = " << placement << "\n";
  out << "classes = " << classes << "\n";
  out << "image_size = " << image_size << "\n";
  out << "backbone_channels = " << join_ints(backbone_channels) << "\n";
  out << "backbone_strides = " << join_ints(backbone_strides) << "\n";
  out << "freeze_backbone = " << (freeze_backbone ? 1 : 0) << "\n";
  out << "attention_channels = " << join_ints(attention_channels) << "\n";
  out << "se_reduction = " << se_reduction << "\n";
  out << "feature_dim = " << feature_dim << "\n";
  out << "lambda = " << fmt_g(lambda) << "\n";
  out << "center_alpha = " << fmt_g(center_alpha) << "\n";
  out << "lr = " << fmt_g(lr) << "\n";
  out << "momentum = " << fmt_g(momentum) << "\n";
  out << "weight_decay = " << fmt_g(weight_decay) << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "epochs = " << epochs << "\n";
  out << "rotation_degrees = " << fmt_g(rotation_degrees) << "\n";
  out << "hflip_prob = " << fmt_g(hflip_prob) << "\n";
  out << "vflip_prob = " << fmt_g(vflip_prob) << "\n";
  out << "crop_threshold = " << crop_threshold << "\n";
  out << "data_dir = " << data_dir << "\n";
  out << "out_dir = " << out_dir << "\n";
  return out.str();
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> errs = model_config().validate();
  for (const auto& e : sgd_config().validate()) errs.push_back(e);
  if (image_size < 8) errs.push_back("image_size must be >= 8");
  if (lambda < 0) errs.push_back("lambda must be >= 0");
  if (center_alpha < 0) errs.push_back("center_alpha must be >= 0");
  if (epochs < 0) errs.push_back("epochs must be >= 0");
  if (rotation_degrees < 0) errs.push_back("rotation_degrees must be >= 0");
  if (hflip_prob < 0 || hflip_prob > 1) errs.push_back("hflip_prob must be in [0, 1]");
  if (vflip_prob < 0 || vflip_prob > 1) errs.push_back("vflip_prob must be in [0, 1]");
  if (crop_threshold < 0 || crop_threshold > 255) {
    errs.push_back("crop_threshold must be in [0, 255]");
  }
  return errs;
}

void RunConfig::validate_or_throw() const {
  auto errs = validate();
  if (errs.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errs) msg += "\n  - " + e;
  throw ConfigError(msg);
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.num_classes = classes;
  m.backbone_channels = backbone_channels;
  m.backbone_strides = backbone_strides;
  m.freeze_backbone = freeze_backbone;
  m.attention_channels = attention_channels;
  m.placement = placement_from_string(placement);
  m.se_reduction = se_reduction;
  m.feature_dim = feature_dim;
  return m;
}

SgdConfig RunConfig::sgd_config() const {
  SgdConfig s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.batch_size = batch_size;
  return s;
}

AugmentPolicy RunConfig::augment_policy() const {
  AugmentPolicy p;
  p.rotation_degrees = rotation_degrees;
  p.hflip_prob = hflip_prob;
  p.vflip_prob = vflip_prob;
  return p;
}

}  // namespace seanet
