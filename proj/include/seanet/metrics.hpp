#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seanet/common.hpp"

// Multi-class evaluation: confusion matrix, average per-class accuracy,
// one-against-all macro-F1, ROC curves and AUC. Pure functions, safe to call
// concurrently.

namespace seanet {

/// KxK count table; rows are true classes, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int true_class, int predicted_class, std::int64_t count = 1);

  int num_classes() const { return k_; }
  std::int64_t count(int true_class, int predicted_class) const;
  std::int64_t row_sum(int true_class) const;
  std::int64_t col_sum(int predicted_class) const;
  std::int64_t total() const;

  std::string to_csv() const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

/// Average classification accuracy: mean over classes of the diagonal share
/// of each row. Throws NumericError when a class has no samples.
double aca(const ConfusionMatrix& cm);

/// Unweighted mean of one-vs-rest F1 scores; a class with P + R == 0
/// contributes F1 = 0.
double macro_f1(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;
};

/// One-vs-rest ROC sweep: one point per distinct score threshold,
/// descending, with (0,0) and (1,1) endpoints.
struct RocCurve {
  int class_id = 0;
  std::vector<RocPoint> points;
};

struct RocResult {
  RocCurve curve;
  double auc = 0;
};

/// Binary ROC/AUC from raw scores; labels must contain both 0 and 1.
/// The trapezoid AUC equals the rank statistic P(score+ > score-) + P(tie)/2.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MulticlassAucResult {
  double macro_auc = 0;
  std::vector<double> per_class;  // NaN for skipped classes
  std::vector<int> skipped;       // classes absent from the labels
  std::vector<RocCurve> curves;
};

/// Macro-average of one-vs-rest AUCs. `probabilities` is NxK row-major and
/// every row must sum to 1 within 1e-5. Classes absent from the labels are
/// skipped and recorded in the result.
MulticlassAucResult multiclass_auc(const std::vector<double>& probabilities,
                                   const std::vector<int>& labels, int num_classes);

}  // namespace seanet
