#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetero/core.hpp"

namespace hetero {

/// Subject-disjoint assignment of subjects to k folds, with per-class image
/// counts tracked per fold. achieved_ratio is the worst per-class max/min
/// image-count ratio across folds; tolerance_met records whether it stayed
/// within tolerance_ratio (the plan is still returned when it did not).
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  double tolerance_ratio = 1.2;
  std::vector<int> assignment;                          // subject id -> fold
  std::vector<std::vector<long long>> per_fold_counts;  // [fold][class] image counts
  double achieved_ratio = 1.0;
  bool tolerance_met = true;

  bool operator==(const FoldPlan&) const = default;
};

/// Greedy largest-first stratified split. Per class, subjects are sorted by
/// image count descending (ties by subject id, then a seeded shuffle within
/// equal-count runs) and each is assigned to the fold currently holding the
/// fewest images of that class, ties to the lowest fold index.
///
/// Throws std::invalid_argument naming the class when a class has fewer than
/// k subjects. An unattainable tolerance is not an error: the best-effort
/// plan comes back flagged with its achieved ratio.
FoldPlan stratified_subject_folds(const Dataset& ds, int k, std::uint64_t seed,
                                  double tolerance_ratio = 1.2);

/// (train, val) sample index sets for one fold: val holds every sample of the
/// fold's subjects, train holds everything else. Throws std::out_of_range for
/// a bad fold index.
std::pair<std::vector<int>, std::vector<int>> fold_train_val(const Dataset& ds,
                                                             const FoldPlan& plan, int fold);

/// Seeded epoch of mini-batches over `indices`: one (seed, epoch)-keyed
/// shuffle, chunked by batch_size, final short batch emitted as-is. Every
/// index appears exactly once per epoch.
std::vector<MiniBatch> minibatch_iter(const Dataset& ds, const std::vector<int>& indices,
                                      int batch_size, std::uint64_t seed, int epoch);

/// Fold manifest text format (round-trips exactly).
void save_fold_plan(const FoldPlan& plan, const std::string& path);
FoldPlan load_fold_plan(const std::string& path);

}  // namespace hetero
