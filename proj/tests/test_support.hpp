#pragma once

// Shared helpers for the test binaries. Test-side randomness deliberately
// uses std::mt19937_64 so oracle computations never share code with the
// library's own generator.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hetero/core.hpp"

namespace testutil {

/// Self-deleting unique temp directory.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    std::uint64_t nonce = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    path = std::filesystem::temp_directory_path() /
           (tag + "_" + std::to_string(nonce));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Builds a well-formed dataset: per subject, its class and sample count and
/// feature values come from the seeded engine. Subjects are assigned to
/// classes round-robin so every class is populated.
inline hetero::Dataset random_dataset(int n_classes, int n_subjects, int dim,
                                      int samples_per_subject, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  hetero::Dataset ds;
  ds.n_classes = n_classes;
  ds.n_subjects = n_subjects;
  ds.subject_class.resize(n_subjects);
  for (int s = 0; s < n_subjects; ++s) ds.subject_class[s] = s % n_classes;
  for (int s = 0; s < n_subjects; ++s) {
    for (int i = 0; i < samples_per_subject; ++i) {
      hetero::Sample sample;
      sample.subject = s;
      sample.class_id = ds.subject_class[s];
      sample.features.resize(dim);
      for (double& f : sample.features) f = norm(eng);
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

inline hetero::Matrix random_matrix(int rows, int cols, std::mt19937_64& eng,
                                    double scale = 1.0) {
  std::normal_distribution<double> norm(0.0, 1.0);
  hetero::Matrix m(rows, cols);
  for (double& v : m.data) v = scale * norm(eng);
  return m;
}

inline std::vector<double> random_vector(int n, std::mt19937_64& eng, double scale = 1.0) {
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = scale * norm(eng);
  return v;
}

}  // namespace testutil
