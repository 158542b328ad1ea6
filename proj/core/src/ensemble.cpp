#include "hetero/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include "hetero/core.hpp"

namespace hetero {
namespace {

void check_prob_vector(const std::vector<double>& probs, std::size_t expected_classes) {
  if (probs.size() != expected_classes) {
    throw std::invalid_argument("probability vector has " + std::to_string(probs.size()) +
                                " entries, expected " + std::to_string(expected_classes));
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw std::invalid_argument("probability outside [0, 1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("probability vector sums to " + std::to_string(sum) +
                                ", expected 1");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

double parse_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw std::runtime_error(path + ": malformed number '" + s + "'");
  }
  return v;
}

long parse_long(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') {
    throw std::runtime_error(path + ": malformed integer '" + s + "'");
  }
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string content;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) content.append(buf, n);
  std::fclose(f);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    std::string line = content.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

}  // namespace

const char* decision_rule_name(DecisionRule rule) {
  return rule == DecisionRule::kMaxVote ? "max-vote" : "harmonic";
}

void validate_ensemble_config(const EnsembleConfig& config, int n_classes) {
  if (!(config.theta >= 0.9 && config.theta < 1.0)) {
    throw std::invalid_argument("theta must lie in [0.9, 1.0), got " +
                                std::to_string(config.theta));
  }
  if (!(config.epsilon_clamp > 0.0)) {
    throw std::invalid_argument("epsilon_clamp must be > 0");
  }
  if (n_classes >= 2 && config.epsilon_clamp >= 1.0 / static_cast<double>(n_classes)) {
    // A clamp at or above the uniform probability would rewrite honest
    // probabilities, not just guard against zeros.
    throw std::invalid_argument("epsilon_clamp must be below 1/n_classes");
  }
  if (config.expected_models < 0) {
    throw std::invalid_argument("expected_models must be >= 0");
  }
}

std::vector<double> harmonic_mean_probs(const ModelConfidences& models, double epsilon_clamp) {
  if (models.empty()) throw std::invalid_argument("harmonic_mean_probs: no models");
  const std::size_t n_classes = models.front().size();
  if (n_classes == 0) throw std::invalid_argument("harmonic_mean_probs: empty probability vector");
  for (const std::vector<double>& probs : models) check_prob_vector(probs, n_classes);

  std::vector<double> combined(n_classes, 0.0);
  const double k = static_cast<double>(models.size());
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    double recip_sum = 0.0;
    for (const std::vector<double>& probs : models) {
      recip_sum += 1.0 / std::max(probs[c], epsilon_clamp);
    }
    combined[c] = k / recip_sum;
    total += combined[c];
  }
  for (double& p : combined) p /= total;
  return combined;
}

Decision decide(const ModelConfidences& models, const EnsembleConfig& config) {
  if (models.empty()) throw std::invalid_argument("decide: no model confidences");
  const std::size_t n_classes = models.front().size();
  validate_ensemble_config(config, static_cast<int>(n_classes));
  if (config.expected_models > 0 &&
      static_cast<int>(models.size()) != config.expected_models) {
    throw std::invalid_argument("decide: got " + std::to_string(models.size()) +
                                " models, expected " + std::to_string(config.expected_models));
  }
  for (const std::vector<double>& probs : models) check_prob_vector(probs, n_classes);

  // Strict > on both comparisons: equal confidences keep the earlier model,
  // and a top confidence exactly at theta is not "confident enough".
  std::size_t best_model = 0;
  double best_conf = -1.0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const double conf =
        models[k][static_cast<std::size_t>(argmax_index(models[k]))];
    if (conf > best_conf) {
      best_conf = conf;
      best_model = k;
    }
  }

  Decision decision;
  if (best_conf > config.theta) {
    decision.rule = DecisionRule::kMaxVote;
    decision.class_id = argmax_index(models[best_model]);
    decision.confidence = best_conf;
  } else {
    decision.rule = DecisionRule::kHarmonic;
    const std::vector<double> combined = harmonic_mean_probs(models, config.epsilon_clamp);
    decision.class_id = argmax_index(combined);
    decision.confidence = combined[static_cast<std::size_t>(decision.class_id)];
  }
  return decision;
}

BatchDecisions batch_decide(const std::vector<ModelConfidences>& samples,
                            const EnsembleConfig& config) {
  if (samples.empty()) throw std::invalid_argument("batch_decide: no samples");
  const std::size_t k = samples.front().size();
  BatchDecisions out;
  out.decisions.reserve(samples.size());
  long long max_vote = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != k) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has " +
                                  std::to_string(samples[i].size()) + " models, expected " +
                                  std::to_string(k));
    }
    Decision d = decide(samples[i], config);
    if (d.rule == DecisionRule::kMaxVote) max_vote += 1;
    out.decisions.push_back(d);
  }
  out.max_vote_fraction = static_cast<double>(max_vote) / static_cast<double>(samples.size());
  out.harmonic_fraction = 1.0 - out.max_vote_fraction;
  return out;
}

void save_confidences(const ConfidenceTable& table, const std::string& path) {
  if (table.samples.empty()) throw std::invalid_argument("save_confidences: no samples");
  if (table.sample_ids.size() != table.samples.size()) {
    throw std::invalid_argument("save_confidences: id/sample count mismatch");
  }
  const std::size_t n_classes =
      table.samples.front().empty() ? 0 : table.samples.front().front().size();
  if (n_classes == 0) throw std::invalid_argument("save_confidences: empty probability vectors");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto emit = [&](const char* fmt, auto... args) {
    if (std::fprintf(f, fmt, args...) < 0) {
      std::fclose(f);
      throw std::runtime_error("write failure on " + path);
    }
  };
  emit("%s", "sample_id,model_id");
  for (std::size_t c = 0; c < n_classes; ++c) emit(",p_class%zu", c);
  emit("%s", "\n");
  for (std::size_t i = 0; i < table.samples.size(); ++i) {
    for (std::size_t k = 0; k < table.samples[i].size(); ++k) {
      if (table.samples[i][k].size() != n_classes) {
        std::fclose(f);
        throw std::invalid_argument("sample row " + std::to_string(i) +
                                    " has a probability vector of unexpected width");
      }
      emit("%lld,%zu", table.sample_ids[i], k);
      for (double p : table.samples[i][k]) emit(",%.17g", p);
      emit("%s", "\n");
    }
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

ConfidenceTable load_confidences(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error(path + ": empty confidences file");
  const std::vector<std::string> header = split_csv(lines.front());
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "model_id") {
    throw std::runtime_error(path + ": expected header sample_id,model_id,p_class0,...");
  }
  const std::size_t n_classes = header.size() - 2;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (header[c + 2] != "p_class" + std::to_string(c)) {
      throw std::runtime_error(path + ": unexpected column '" + header[c + 2] + "'");
    }
  }

  ConfidenceTable table;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::vector<std::string> fields = split_csv(lines[li]);
    if (fields.size() != header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(li) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(header.size()));
    }
    const long long sample_id = parse_long(fields[0], path);
    const long long model_id = parse_long(fields[1], path);
    if (sample_id < 0 || model_id < 0) {
      throw std::runtime_error(path + ": negative id on row " + std::to_string(li));
    }
    if (table.sample_ids.empty() || table.sample_ids.back() != sample_id) {
      if (!table.sample_ids.empty() && sample_id < table.sample_ids.back()) {
        throw std::runtime_error(path + ": sample ids must be grouped and increasing (row " +
                                 std::to_string(li) + ")");
      }
      if (model_id != 0) {
        throw std::runtime_error(path + ": sample " + std::to_string(sample_id) +
                                 " does not start at model_id 0");
      }
      table.sample_ids.push_back(sample_id);
      table.samples.emplace_back();
    } else if (model_id != static_cast<long long>(table.samples.back().size())) {
      throw std::runtime_error(path + ": model ids for sample " + std::to_string(sample_id) +
                               " are not consecutive from 0");
    }
    std::vector<double> probs(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) probs[c] = parse_double(fields[c + 2], path);
    table.samples.back().push_back(std::move(probs));
  }
  if (table.samples.empty()) throw std::runtime_error(path + ": no confidence rows");
  return table;
}

void save_decisions(const DecisionTable& table, const std::string& path) {
  if (table.sample_ids.size() != table.decisions.size()) {
    throw std::invalid_argument("save_decisions: id/decision count mismatch");
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto emit = [&](const char* fmt, auto... args) {
    if (std::fprintf(f, fmt, args...) < 0) {
      std::fclose(f);
      throw std::runtime_error("write failure on " + path);
    }
  };
  emit("%s", "sample_id,decided_class,confidence,rule\n");
  for (std::size_t i = 0; i < table.decisions.size(); ++i) {
    emit("%lld,%d,%.17g,%s\n", table.sample_ids[i], table.decisions[i].class_id,
         table.decisions[i].confidence, decision_rule_name(table.decisions[i].rule));
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

DecisionTable load_decisions(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || lines.front() != "sample_id,decided_class,confidence,rule") {
    throw std::runtime_error(path + ": expected header sample_id,decided_class,confidence,rule");
  }
  DecisionTable table;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::vector<std::string> fields = split_csv(lines[li]);
    if (fields.size() != 4) {
      throw std::runtime_error(path + ": row " + std::to_string(li) + " has " +
                               std::to_string(fields.size()) + " fields, expected 4");
    }
    const long long sample_id = parse_long(fields[0], path);
    if (!table.sample_ids.empty() && sample_id <= table.sample_ids.back()) {
      throw std::runtime_error(path + ": sample ids must be strictly increasing");
    }
    Decision d;
    d.class_id = static_cast<int>(parse_long(fields[1], path));
    d.confidence = parse_double(fields[2], path);
    if (fields[3] == "max-vote") {
      d.rule = DecisionRule::kMaxVote;
    } else if (fields[3] == "harmonic") {
      d.rule = DecisionRule::kHarmonic;
    } else {
      throw std::runtime_error(path + ": unknown rule '" + fields[3] + "'");
    }
    table.sample_ids.push_back(sample_id);
    table.decisions.push_back(d);
  }
  if (table.decisions.empty()) throw std::runtime_error(path + ": no decision rows");
  return table;
}

}  // namespace hetero
