#include "hetero/metrics.hpp"

#include <cstdio>
#include <stdexcept>
#include <utility>

namespace hetero {
namespace {

EvalResult empty_result(int n_classes) {
  EvalResult r;
  r.empty = true;
  r.subset_fraction = 0.0;
  r.per_class_f1.assign(static_cast<std::size_t>(n_classes), 0.0);
  r.supports.assign(static_cast<std::size_t>(n_classes), 0);
  r.confusion.assign(static_cast<std::size_t>(n_classes),
                     std::vector<long long>(static_cast<std::size_t>(n_classes), 0));
  return r;
}

}  // namespace

EvalResult weighted_f1(const std::vector<int>& preds, const std::vector<int>& truths,
                       int n_classes) {
  if (n_classes < 2) throw std::invalid_argument("weighted_f1: n_classes must be >= 2");
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("weighted_f1: " + std::to_string(preds.size()) +
                                " predictions vs " + std::to_string(truths.size()) + " truths");
  }
  if (preds.empty()) return empty_result(n_classes);

  EvalResult r;
  r.per_class_f1.assign(static_cast<std::size_t>(n_classes), 0.0);
  r.supports.assign(static_cast<std::size_t>(n_classes), 0);
  r.confusion.assign(static_cast<std::size_t>(n_classes),
                     std::vector<long long>(static_cast<std::size_t>(n_classes), 0));

  long long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int t = truths[i];
    const int p = preds[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      throw std::out_of_range("weighted_f1: class id outside [0, " +
                              std::to_string(n_classes) + ") at sample " + std::to_string(i));
    }
    r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] += 1;
    if (t == p) correct += 1;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());

  double weighted_sum = 0.0;
  long long total_support = 0;
  for (int c = 0; c < n_classes; ++c) {
    long long tp = r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    long long support = 0;   // row sum: actual members of class c
    long long predicted = 0; // column sum: samples predicted as c
    for (int j = 0; j < n_classes; ++j) {
      support += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)];
      predicted += r.confusion[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
    }
    r.supports[static_cast<std::size_t>(c)] = support;
    // F1 = 2tp / (support + predicted); the 0/0 case (no members, none
    // predicted) scores 0 by convention.
    const long long denom = support + predicted;
    r.per_class_f1[static_cast<std::size_t>(c)] =
        denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    weighted_sum += static_cast<double>(support) * r.per_class_f1[static_cast<std::size_t>(c)];
    total_support += support;
  }
  r.weighted_f1 = total_support == 0 ? 0.0 : weighted_sum / static_cast<double>(total_support);
  return r;
}

EvalResult high_confidence_subset_eval(const std::vector<int>& preds,
                                       const std::vector<double>& confidences,
                                       const std::vector<int>& truths, double theta,
                                       int n_classes) {
  if (preds.size() != confidences.size() || preds.size() != truths.size()) {
    throw std::invalid_argument("high_confidence_subset_eval: array sizes differ");
  }
  if (preds.empty()) throw std::invalid_argument("high_confidence_subset_eval: no samples");

  std::vector<int> sub_preds;
  std::vector<int> sub_truths;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (confidences[i] > theta) {  // strict: exactly-at-threshold is excluded
      sub_preds.push_back(preds[i]);
      sub_truths.push_back(truths[i]);
    }
  }
  EvalResult r = sub_preds.empty() ? empty_result(n_classes)
                                   : weighted_f1(sub_preds, sub_truths, n_classes);
  r.subset_fraction =
      static_cast<double>(sub_preds.size()) / static_cast<double>(preds.size());
  return r;
}

void save_metrics_csv(const std::vector<std::pair<std::string, EvalResult>>& rows,
                      const std::string& path) {
  if (rows.empty()) throw std::invalid_argument("save_metrics_csv: no rows");
  const std::size_t n_classes = rows.front().second.per_class_f1.size();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto emit = [&](const char* fmt, auto... args) {
    if (std::fprintf(f, fmt, args...) < 0) {
      std::fclose(f);
      throw std::runtime_error("write failure on " + path);
    }
  };
  emit("%s", "split,accuracy,weighted_f1");
  for (std::size_t c = 0; c < n_classes; ++c) emit(",f1_class_%zu", c);
  emit("%s", "\n");
  for (const auto& [name, r] : rows) {
    if (r.per_class_f1.size() != n_classes) {
      std::fclose(f);
      throw std::invalid_argument("metrics rows disagree on class count");
    }
    emit("%s,%.17g,%.17g", name.c_str(), r.accuracy, r.weighted_f1);
    for (double f1 : r.per_class_f1) emit(",%.17g", f1);
    emit("%s", "\n");
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

std::string format_metrics_table(const std::vector<std::pair<std::string, EvalResult>>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-20s %9s %12s %10s %8s\n", "split", "accuracy",
                "weighted_f1", "fraction", "samples");
  out += buf;
  for (const auto& [name, r] : rows) {
    long long total = 0;
    for (long long s : r.supports) total += s;
    std::snprintf(buf, sizeof(buf), "%-20s %9.4f %12.4f %10.4f %8lld%s\n", name.c_str(),
                  r.accuracy, r.weighted_f1, r.subset_fraction, total,
                  r.empty ? "  (empty subset)" : "");
    out += buf;
  }
  return out;
}

}  // namespace hetero
