#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seanet/common.hpp"

namespace seanet {

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& s);

/// One dataset record: an image source (file path or "synth:<seed>"),
/// its class label and the split it belongs to.
struct ManifestRecord {
  std::string source;
  int label = 0;
  Split split = Split::Train;
};

/// Ordered record list, serialized as a CSV with header "source,label,split".
struct DatasetManifest {
  std::vector<ManifestRecord> records;

  int num_classes() const;  // max label + 1
  std::vector<std::int64_t> class_counts(Split split, int num_classes) const;
  std::vector<std::size_t> indices_of(Split split) const;

  /// Every split-class count equal; used to assert the balanced test split.
  bool split_is_balanced(Split split) const;

  std::string to_csv() const;
  static DatasetManifest from_csv(const std::string& text);

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

}  // namespace seanet
