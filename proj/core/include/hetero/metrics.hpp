#pragma once

#include <string>
#include <utility>
#include <vector>

namespace hetero {

/// Classification metrics over one prediction set. confusion[t][p] counts
/// samples of true class t predicted as p. A class with zero precision and
/// zero recall gets F1 = 0 rather than NaN. `empty` marks an evaluation
/// over zero samples (possible for thresholded subsets); all scores are 0
/// in that case and subset_fraction tells how much survived the threshold.
struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_f1;
  double weighted_f1 = 0.0;
  std::vector<long long> supports;
  std::vector<std::vector<long long>> confusion;
  bool empty = false;
  double subset_fraction = 1.0;
};

/// Support-weighted F1 plus the full metric set.
EvalResult weighted_f1(const std::vector<int>& preds, const std::vector<int>& truths,
                       int n_classes);

/// Metrics restricted to samples whose confidence strictly exceeds theta.
/// subset_fraction is the surviving share; an empty subset is flagged, not
/// NaN.
EvalResult high_confidence_subset_eval(const std::vector<int>& preds,
                                       const std::vector<double>& confidences,
                                       const std::vector<int>& truths, double theta,
                                       int n_classes);

/// One line per split: split,accuracy,weighted_f1,f1_class_0,...
void save_metrics_csv(const std::vector<std::pair<std::string, EvalResult>>& rows,
                      const std::string& path);

/// Fixed-width human-readable table of the same rows.
std::string format_metrics_table(const std::vector<std::pair<std::string, EvalResult>>& rows);

}  // namespace hetero
