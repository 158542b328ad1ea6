#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetero/core.hpp"

namespace hetero {

/// Configuration of the subject-heterogeneous generator. Features are
/// class_mean + subject_offset + noise, so every image from one subject
/// shares a persistent offset that a per-image model would conflate with
/// class signal.
struct GenConfig {
  int dim = 16;
  int n_classes = 2;
  std::vector<int> subjects_per_class = {14, 14};
  double class_separation = 2.0;     // pairwise distance between class means
  double subject_bias_scale = 1.5;   // stddev of per-subject offsets
  double noise_scale = 1.0;          // stddev of per-image noise
  double power_law_exponent = 1.5;   // images-per-subject tail exponent
  int min_images = 20;
  int max_images = 400;
  double class_imbalance_ratio = 2.1;  // class 0 images / each other class
  std::uint64_t seed = 0;

  /// Small two-class shape used by benchmarks and fast tests.
  static GenConfig benchmark_default(std::uint64_t seed);
  /// Larger cohort (60 + 41 subjects) whose fold counts can balance tightly.
  static GenConfig cohort101(std::uint64_t seed);
};

/// What the generator actually drew, for tests that need the latent truth.
struct GroundTruth {
  Matrix class_means;            // n_classes x dim
  Matrix subject_offsets;        // n_subjects x dim
  std::vector<int> subject_class;
  std::vector<long long> images_per_subject;
  std::uint64_t seed = 0;
};

struct Generated {
  Dataset dataset;
  GroundTruth truth;
};

/// Deterministic generation from config.seed. Subjects are numbered
/// class-major (class 0 subjects first), samples emitted subject-major.
Generated generate(const GenConfig& config);

void save_ground_truth(const GroundTruth& truth, const std::string& path);

}  // namespace hetero
