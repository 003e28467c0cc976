#include "seanet/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace seanet {

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw IoError("unknown split '" + s + "' (expected train or test)");
}

int DatasetManifest::num_classes() const {
  int mx = -1;
  for (const auto& r : records) mx = std::max(mx, r.label);
  return mx + 1;
}

std::vector<std::int64_t> DatasetManifest::class_counts(Split split, int num_classes) const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (r.label < 0 || r.label >= num_classes) {
      throw IoError("manifest label " + std::to_string(r.label) + " outside [0, " +
                    std::to_string(num_classes - 1) + "]");
    }
    ++counts[static_cast<std::size_t>(r.label)];
  }
  return counts;
}

std::vector<std::size_t> DatasetManifest::indices_of(Split split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) idx.push_back(i);
  }
  return idx;
}

bool DatasetManifest::split_is_balanced(Split split) const {
  const int k = num_classes();
  if (k <= 0) return true;
  auto counts = class_counts(split, k);
  for (int i = 1; i < k; ++i) {
    if (counts[static_cast<std::size_t>(i)] != counts[0]) return false;
  }
  return true;
}

std::string DatasetManifest::to_csv() const {
  std::string out = "source,label,split\n";
  for (const auto& r : records) {
    out += r.source + "," + std::to_string(r.label) + "," + to_string(r.split) + "\n";
  }
  return out;
}

DatasetManifest DatasetManifest::from_csv(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == "source,label,split") continue;  // header optional
    }
    const auto c1 = line.rfind(',');
    const auto c0 = c1 == std::string::npos ? std::string::npos : line.rfind(',', c1 - 1);
    if (c0 == std::string::npos || c1 == std::string::npos || c0 == 0) {
      throw IoError("manifest line " + std::to_string(lineno) + " is not 'source,label,split'");
    }
    ManifestRecord r;
    r.source = line.substr(0, c0);
    const std::string label_s = line.substr(c0 + 1, c1 - c0 - 1);
    try {
      r.label = std::stoi(label_s);
    } catch (const std::exception&) {
      throw IoError("manifest line " + std::to_string(lineno) + " has bad label '" + label_s +
                    "'");
    }
    if (r.label < 0) {
      throw IoError("manifest line " + std::to_string(lineno) + " has negative label");
    }
    r.split = split_from_string(line.substr(c1 + 1));
    m.records.push_back(std::move(r));
  }
  return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_csv();
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_csv(text);
}

}  // namespace seanet
