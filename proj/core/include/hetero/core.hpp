#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace hetero {

/// Dense row-major matrix of doubles. All core math runs in 64-bit floats;
/// finite-difference gradient checks need the extra precision.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

  bool operator==(const Matrix&) const = default;
};

/// Index of the largest entry; ties break to the lowest index.
inline int argmax_index(const double* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline int argmax_index(const std::vector<double>& values) {
  return argmax_index(values.data(), static_cast<int>(values.size()));
}

/// One observation: a feature vector plus the subject and class it belongs to.
struct Sample {
  std::vector<double> features;
  int subject = 0;
  int class_id = 0;
};

/// A labeled collection of samples. Class and subject ids are dense integers
/// (0..n_classes-1 and 0..n_subjects-1); every subject carries exactly one
/// class, recorded in subject_class. Immutable after construction by
/// convention, so it can be shared across fold workers without locking.
struct Dataset {
  std::vector<Sample> samples;
  int n_classes = 0;
  int n_subjects = 0;
  std::vector<int> subject_class;  // subject id -> class id

  int dim() const { return samples.empty() ? 0 : static_cast<int>(samples[0].features.size()); }
};

/// A mini-batch plus its class-level and subject-level partitions. by_class[c]
/// and by_subject[s] hold dataset indices in batch order; empty subsets are
/// kept so lookups stay O(1).
struct MiniBatch {
  std::vector<int> indices;
  std::vector<std::vector<int>> by_class;
  std::vector<std::vector<int>> by_subject;
};

/// Checks every Dataset invariant and reports violations as human-readable
/// strings naming the offending sample or subject. Empty report means the
/// dataset is safe for every downstream module.
std::vector<std::string> validate_dataset(const Dataset& ds);

/// Splits `indices` into per-class and per-subject subsets, preserving input
/// order within each subset. Throws std::out_of_range for an invalid index
/// and std::invalid_argument for a duplicated one.
MiniBatch partition_batch(const Dataset& ds, const std::vector<int>& indices);

/// Gathers the feature rows of `indices` into an m x dim matrix.
Matrix gather_inputs(const Dataset& ds, const std::vector<int>& indices);

/// Line-oriented dataset text format, version 1:
///   header `d=<dim> n_c=<k> n_s=<k>`, then one `subject,class,f1,...,fd`
///   line per sample. Floats are written with 17 significant digits, so
///   values round-trip exactly (well within the 1e-12 contract).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace hetero
