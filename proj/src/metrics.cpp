#include "seanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace seanet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ShapeError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(int t, int p, std::int64_t count) {
  if (t < 0 || t >= k_ || p < 0 || p >= k_) {
    throw ShapeError("confusion matrix index out of range: (" + std::to_string(t) + ", " +
                     std::to_string(p) + ") for " + std::to_string(k_) + " classes");
  }
  if (count < 0) throw ShapeError("confusion matrix counts must be nonnegative");
  counts_[static_cast<std::size_t>(t) * k_ + p] += count;
}

std::int64_t ConfusionMatrix::count(int t, int p) const {
  return counts_[static_cast<std::size_t>(t) * k_ + p];
}

std::int64_t ConfusionMatrix::row_sum(int t) const {
  std::int64_t s = 0;
  for (int p = 0; p < k_; ++p) s += count(t, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int p) const {
  std::int64_t s = 0;
  for (int t = 0; t < k_; ++t) s += count(t, p);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "true_class";
  for (int p = 0; p < k_; ++p) out += ",pred_" + std::to_string(p);
  out += "\n";
  for (int t = 0; t < k_; ++t) {
    out += std::to_string(t);
    for (int p = 0; p < k_; ++p) out += "," + std::to_string(count(t, p));
    out += "\n";
  }
  return out;
}

double aca(const ConfusionMatrix& cm) {
  double acc = 0;
  for (int t = 0; t < cm.num_classes(); ++t) {
    const std::int64_t row = cm.row_sum(t);
    if (row == 0) {
      throw NumericError("per-class accuracy undefined: class " + std::to_string(t) +
                         " has no samples");
    }
    acc += static_cast<double>(cm.count(t, t)) / static_cast<double>(row);
  }
  return acc / cm.num_classes();
}

double macro_f1(const ConfusionMatrix& cm) {
  double f1_sum = 0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const std::int64_t row = cm.row_sum(k);
    if (row == 0) {
      throw NumericError("macro-F1 undefined: class " + std::to_string(k) + " has no samples");
    }
    const std::int64_t col = cm.col_sum(k);
    const double tp = static_cast<double>(cm.count(k, k));
    const double precision = col > 0 ? tp / static_cast<double>(col) : 0.0;
    const double recall = tp / static_cast<double>(row);
    if (precision + recall > 0) {
      f1_sum += 2.0 * precision * recall / (precision + recall);
    }
  }
  return f1_sum / cm.num_classes();
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw ShapeError("roc_auc needs equally sized, nonempty scores and labels");
  }
  std::int64_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++pos;
    } else if (l == 0) {
      ++neg;
    } else {
      throw ShapeError("roc_auc labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) {
    throw NumericError("roc_auc requires both label values to be present");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult res;
  res.curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::int64_t tp = 0, fp = 0;
  double auc = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    // Consume the whole tie group so every point corresponds to one
    // distinct threshold; the trapezoid over the group handles ties.
    while (i < order.size() && scores[order[i]] == thr) {
      if (labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const RocPoint& prev = res.curve.points.back();
    auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
    res.curve.points.push_back({fpr, tpr, thr});
  }
  res.auc = auc;
  return res;
}

MulticlassAucResult multiclass_auc(const std::vector<double>& probabilities,
                                   const std::vector<int>& labels, int num_classes) {
  if (num_classes < 2) throw ShapeError("multiclass_auc needs at least two classes");
  const std::size_t n = labels.size();
  if (n == 0 || probabilities.size() != n * static_cast<std::size_t>(num_classes)) {
    throw ShapeError("multiclass_auc probability matrix does not match labels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (int k = 0; k < num_classes; ++k) row += probabilities[i * num_classes + k];
    if (std::abs(row - 1.0) > 1e-5) {
      throw NumericError("probability row " + std::to_string(i) + " sums to " + fmt_g(row) +
                         ", expected 1");
    }
  }
  MulticlassAucResult res;
  res.per_class.assign(static_cast<std::size_t>(num_classes),
                       std::numeric_limits<double>::quiet_NaN());
  double total = 0;
  int used = 0;
  for (int k = 0; k < num_classes; ++k) {
    std::vector<int> binary(n);
    bool present = false;
    for (std::size_t i = 0; i < n; ++i) {
      binary[i] = labels[i] == k ? 1 : 0;
      present = present || binary[i] == 1;
    }
    if (!present) {
      res.skipped.push_back(k);
      continue;
    }
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = probabilities[i * num_classes + k];
    RocResult r = roc_auc(scores, binary);
    r.curve.class_id = k;
    res.per_class[static_cast<std::size_t>(k)] = r.auc;
    res.curves.push_back(std::move(r.curve));
    total += r.auc;
    ++used;
  }
  if (used == 0) throw NumericError("multiclass_auc: no class present in labels");
  res.macro_auc = total / used;
  return res;
}

}  // namespace seanet
