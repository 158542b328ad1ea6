#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hetero {

struct SelfCheckOptions {
  /// Doubles one analytic gradient coordinate before the end-to-end
  /// finite-difference check, to prove the harness can catch a wrong
  /// gradient. The run must then report that check as failed.
  bool inject_gradient_fault = false;
  std::uint64_t seed = 0;
};

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelfCheckReport {
  std::vector<CheckLine> lines;
  bool pass = false;
};

/// Independent verification of the numerical core:
///  - the finite-difference checker accepts a known quadratic gradient and
///    rejects a deliberately corrupted one;
///  - analytic gradients of the composite loss match central differences on
///    seeded small instances, for every parameter group;
///  - the loss total equals the weighted sum of its logged terms;
///  - the pairwise subject-center term equals a literal ordered-pair
///    double-loop transcription, values and gradients;
///  - ensemble decisions match a direct transcription of the
///    threshold/max-vote/harmonic rule;
///  - weighted F1 matches a from-first-principles computation.
SelfCheckReport run_selfchecks(const SelfCheckOptions& options);

}  // namespace hetero
