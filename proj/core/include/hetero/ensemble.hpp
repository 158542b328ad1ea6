#pragma once

#include <string>
#include <vector>

namespace hetero {

/// Thresholded combination rule over K per-model probability vectors.
struct EnsembleConfig {
  double theta = 0.95;          // confidence gate, must lie in [0.9, 1.0)
  double epsilon_clamp = 1e-6;  // floor for probabilities inside the harmonic mean
  int expected_models = 0;      // 0 = accept any K >= 1
};

/// One probability vector per model for a single sample.
using ModelConfidences = std::vector<std::vector<double>>;

enum class DecisionRule { kMaxVote, kHarmonic };

const char* decision_rule_name(DecisionRule rule);

struct Decision {
  int class_id = 0;
  double confidence = 0.0;  // top confidence among models (max-vote) or top combined prob
  DecisionRule rule = DecisionRule::kMaxVote;
};

/// Per-class harmonic mean across models with probabilities floored at
/// epsilon_clamp, renormalized to sum 1. The harmonic mean punishes any
/// single dissenting near-zero probability, unlike the arithmetic mean.
std::vector<double> harmonic_mean_probs(const ModelConfidences& models, double epsilon_clamp);

/// If the most confident model's top probability strictly exceeds theta,
/// trust that model (max vote); otherwise fall back to the harmonic-mean
/// consensus. Ties pick the lowest model / class index.
Decision decide(const ModelConfidences& models, const EnsembleConfig& config);

struct BatchDecisions {
  std::vector<Decision> decisions;
  double max_vote_fraction = 0.0;
  double harmonic_fraction = 0.0;
};

/// Decide every sample; throws if a sample's model count deviates from the
/// first sample's (or from expected_models when set).
BatchDecisions batch_decide(const std::vector<ModelConfidences>& samples,
                            const EnsembleConfig& config);

void validate_ensemble_config(const EnsembleConfig& config, int n_classes);

/// Per-model probability vectors for a set of samples. sample_ids are the
/// originating dataset indices (strictly increasing), so downstream stages
/// can align decisions with ground truth even for subset predictions.
struct ConfidenceTable {
  std::vector<long long> sample_ids;
  std::vector<ModelConfidences> samples;
};

/// CSV with header sample_id,model_id,p_class0,... one row per (sample, model).
void save_confidences(const ConfidenceTable& table, const std::string& path);
ConfidenceTable load_confidences(const std::string& path);

struct DecisionTable {
  std::vector<long long> sample_ids;
  std::vector<Decision> decisions;
};

/// CSV with header sample_id,decided_class,confidence,rule.
void save_decisions(const DecisionTable& table, const std::string& path);
DecisionTable load_decisions(const std::string& path);

}  // namespace hetero
