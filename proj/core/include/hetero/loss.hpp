#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hetero/core.hpp"

namespace hetero {

/// Learnable class centers (n_classes x d) and subject centers
/// (n_subjects x d) in deep-feature space. Both are ordinary parameters:
/// they receive gradients from the center losses and are updated by the
/// same optimizer as the network.
struct CenterStore {
  Matrix class_centers;
  Matrix subject_centers;

  /// Seeded N(0, 1) entries scaled by 0.01: breaks symmetry without
  /// dominating early cross-entropy gradients.
  static CenterStore init(int n_classes, int n_subjects, int dim, std::uint64_t seed);
};

/// Weights of the three center terms in the composite loss.
struct LossWeights {
  double lambda1 = 0.05;   // class-center term
  double lambda2 = 0.05;   // subject-center term
  double lambda3 = 0.005;  // subject-class pairwise term

  bool operator==(const LossWeights&) const = default;
};

/// Per-term values and gradients of the composite loss for one batch.
/// total is computed as ce + l1*class_center + l2*subject_center +
/// l3*subject_class, in that order, so the decomposition identity holds to
/// machine precision.
struct LossBreakdown {
  double ce = 0.0;
  double class_center = 0.0;
  double subject_center = 0.0;
  double subject_class = 0.0;
  double total = 0.0;

  Matrix d_features;                 // m x d
  Matrix d_head_w;                   // n_classes x d
  std::vector<double> d_head_b;      // n_classes
  Matrix d_class_centers;            // n_classes x d
  Matrix d_subject_centers;          // n_subjects x d
};

struct CrossEntropyResult {
  double value = 0.0;
  Matrix d_features;
  Matrix d_w;
  std::vector<double> d_b;
};

/// Mean softmax cross-entropy over the batch, numerically stabilized by
/// max-logit subtraction. W is n_classes x d; logits are W x + b.
CrossEntropyResult cross_entropy(const Matrix& features, const std::vector<int>& labels,
                                 const Matrix& w, const std::vector<double>& b);

struct CenterTermResult {
  double value = 0.0;
  Matrix d_features;
  Matrix d_centers;
};

/// Sum over classes of the mean squared distance of each class's batch
/// features to that class center. The per-class mean acts as a class weight;
/// classes absent from the batch contribute nothing and get zero gradient.
CenterTermResult class_center_loss(const MiniBatch& batch, const Matrix& features,
                                   const CenterStore& centers);

/// Same shape as class_center_loss but grouped by subject against subject
/// centers, which makes it robust to within-batch subject imbalance.
CenterTermResult subject_center_loss(const MiniBatch& batch, const Matrix& features,
                                     const CenterStore& centers);

struct SubjectClassResult {
  double value = 0.0;
  Matrix d_subject_centers;
};

/// Pairwise term over the subject centers present in the batch: squared
/// distance for same-class pairs (attraction), 1/(1 + squared distance) for
/// different-class pairs (bounded repulsion). The sum runs over ordered
/// pairs, so each unordered pair counts twice.
SubjectClassResult subject_class_center_loss(const std::vector<int>& present_subjects,
                                             const CenterStore& centers,
                                             const std::vector<int>& subject_class);

/// Composite loss: ce + l1*class + l2*subject + l3*subject_class, with the
/// matching weighted gradient blocks. Feature gradients accumulate the
/// cross-entropy and both per-sample center terms.
LossBreakdown heterogeneity_loss(const MiniBatch& batch, const Matrix& features,
                                 const Matrix& head_w, const std::vector<double>& head_b,
                                 const CenterStore& centers, const LossWeights& weights);

/// One named parameter block for the finite-difference checker. `values` is
/// mutated in place during the check and restored afterwards.
struct FdGroup {
  std::string name;
  double* values = nullptr;
  std::size_t size = 0;
  const double* analytic = nullptr;
};

struct FdGroupReport {
  std::string name;
  double max_rel_error = 0.0;
  bool finite = true;
  bool pass = false;
};

struct FdReport {
  std::vector<FdGroupReport> groups;
  bool pass = false;
};

/// Central-difference gradient check. Per group the relative error is
/// max|g_analytic - g_fd| / max(1, max|g_fd|) over the checked coordinates;
/// groups larger than 1000 coordinates are checked on a seeded subsample.
/// A non-finite loss at a perturbed point is reported, not thrown.
FdReport finite_difference_check(const std::function<double()>& loss_fn,
                                 const std::vector<FdGroup>& groups, double epsilon,
                                 double tolerance, std::uint64_t subsample_seed = 0);

}  // namespace hetero
