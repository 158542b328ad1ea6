#include "hetero/sampler.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "hetero/rng.hpp"

namespace hetero {

namespace {

double worst_class_ratio(const std::vector<std::vector<long long>>& per_fold_counts,
                         int n_classes) {
  double worst = 1.0;
  for (int c = 0; c < n_classes; ++c) {
    long long lo = std::numeric_limits<long long>::max();
    long long hi = 0;
    for (const auto& fold : per_fold_counts) {
      lo = std::min(lo, fold[c]);
      hi = std::max(hi, fold[c]);
    }
    double ratio;
    if (hi == 0) {
      ratio = 1.0;  // class absent everywhere
    } else if (lo == 0) {
      ratio = std::numeric_limits<double>::infinity();
    } else {
      ratio = static_cast<double>(hi) / static_cast<double>(lo);
    }
    worst = std::max(worst, ratio);
  }
  return worst;
}

}  // namespace

FoldPlan stratified_subject_folds(const Dataset& ds, int k, std::uint64_t seed,
                                  double tolerance_ratio) {
  if (k < 1) throw std::invalid_argument("fold count k must be >= 1");
  if (tolerance_ratio < 1.0) throw std::invalid_argument("tolerance_ratio must be >= 1");

  std::vector<long long> images(ds.n_subjects, 0);
  for (const Sample& s : ds.samples) ++images[s.subject];

  std::vector<std::vector<int>> per_class(ds.n_classes);
  for (int s = 0; s < ds.n_subjects; ++s) per_class[ds.subject_class[s]].push_back(s);

  for (int c = 0; c < ds.n_classes; ++c) {
    if (static_cast<int>(per_class[c].size()) < k) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "class %d has %zu subjects, need at least %d for %d folds",
                    c, per_class[c].size(), k, k);
      throw std::invalid_argument(buf);
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.tolerance_ratio = tolerance_ratio;
  plan.assignment.assign(ds.n_subjects, -1);
  plan.per_fold_counts.assign(k, std::vector<long long>(ds.n_classes, 0));

  Rng rng(mix_seed(seed, seed_tag::folds));
  for (int c = 0; c < ds.n_classes; ++c) {
    std::vector<int>& order = per_class[c];
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (images[a] != images[b]) return images[a] > images[b];
      return a < b;
    });
    // seeded shuffle inside each run of equal counts
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i + 1;
      while (j < order.size() && images[order[j]] == images[order[i]]) ++j;
      if (j - i > 1) rng.shuffle(order.data() + i, j - i);
      i = j;
    }
    for (int subject : order) {
      int best_fold = 0;
      for (int f = 1; f < k; ++f) {
        if (plan.per_fold_counts[f][c] < plan.per_fold_counts[best_fold][c]) best_fold = f;
      }
      plan.assignment[subject] = best_fold;
      plan.per_fold_counts[best_fold][c] += images[subject];
    }
  }

  plan.achieved_ratio = worst_class_ratio(plan.per_fold_counts, ds.n_classes);
  plan.tolerance_met = plan.achieved_ratio <= tolerance_ratio;
  return plan;
}

std::pair<std::vector<int>, std::vector<int>> fold_train_val(const Dataset& ds,
                                                             const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= plan.k) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "fold %d out of range [0, %d)", fold, plan.k);
    throw std::out_of_range(buf);
  }
  if (static_cast<int>(plan.assignment.size()) != ds.n_subjects) {
    throw std::invalid_argument("fold plan does not match dataset subject count");
  }
  std::vector<int> train, val;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (plan.assignment[ds.samples[i].subject] == fold) {
      val.push_back(static_cast<int>(i));
    } else {
      train.push_back(static_cast<int>(i));
    }
  }
  return {std::move(train), std::move(val)};
}

std::vector<MiniBatch> minibatch_iter(const Dataset& ds, const std::vector<int>& indices,
                                      int batch_size, std::uint64_t seed, int epoch) {
  if (indices.empty()) throw std::invalid_argument("minibatch_iter: empty index set");
  if (batch_size < 1) throw std::invalid_argument("minibatch_iter: batch_size must be >= 1");
  if (batch_size > static_cast<int>(indices.size())) {
    throw std::invalid_argument("minibatch_iter: batch_size exceeds the index set");
  }

  std::vector<int> perm = indices;
  Rng rng(mix_seed(mix_seed(seed, seed_tag::batches_stage1), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(perm);

  std::vector<MiniBatch> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t stop = std::min(perm.size(), start + batch_size);
    std::vector<int> chunk(perm.begin() + start, perm.begin() + stop);
    batches.push_back(partition_batch(ds, chunk));
  }
  return batches;
}

void save_fold_plan(const FoldPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  const int n_subjects = static_cast<int>(plan.assignment.size());
  const int n_classes = plan.per_fold_counts.empty()
                            ? 0
                            : static_cast<int>(plan.per_fold_counts[0].size());
  char buf[64];
  out << "hetero-folds v1\n";
  out << "k=" << plan.k << "\n";
  out << "seed=" << plan.seed << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", plan.tolerance_ratio);
  out << "tolerance_ratio=" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.17g", plan.achieved_ratio);
  out << "achieved_ratio=" << buf << "\n";
  out << "tolerance_met=" << (plan.tolerance_met ? 1 : 0) << "\n";
  out << "n_subjects=" << n_subjects << "\n";
  out << "n_classes=" << n_classes << "\n";
  for (int f = 0; f < plan.k; ++f) {
    out << "fold " << f << " subjects";
    for (int s = 0; s < n_subjects; ++s) {
      if (plan.assignment[s] == f) out << ' ' << s;
    }
    out << "\n";
    out << "fold " << f << " counts";
    for (int c = 0; c < n_classes; ++c) out << ' ' << plan.per_fold_counts[f][c];
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

FoldPlan load_fold_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "hetero-folds v1") {
    throw std::runtime_error(path + ": not a fold manifest (missing 'hetero-folds v1')");
  }

  FoldPlan plan;
  int n_subjects = -1, n_classes = -1;
  auto expect = [&](const char* key) -> std::string {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated manifest");
    const std::string prefix = std::string(key) + "=";
    if (line.rfind(prefix, 0) != 0) {
      throw std::runtime_error(path + ": expected '" + key + "=', got '" + line + "'");
    }
    return line.substr(prefix.size());
  };

  plan.k = std::stoi(expect("k"));
  plan.seed = std::stoull(expect("seed"));
  plan.tolerance_ratio = std::strtod(expect("tolerance_ratio").c_str(), nullptr);
  plan.achieved_ratio = std::strtod(expect("achieved_ratio").c_str(), nullptr);
  plan.tolerance_met = std::stoi(expect("tolerance_met")) != 0;
  n_subjects = std::stoi(expect("n_subjects"));
  n_classes = std::stoi(expect("n_classes"));
  if (plan.k < 1 || n_subjects < 0 || n_classes < 0) {
    throw std::runtime_error(path + ": manifest values out of range");
  }

  plan.assignment.assign(n_subjects, -1);
  plan.per_fold_counts.assign(plan.k, std::vector<long long>(n_classes, 0));
  for (int f = 0; f < plan.k; ++f) {
    for (const char* what : {"subjects", "counts"}) {
      if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated manifest");
      std::istringstream ss(line);
      std::string word;
      int fold_id = -1;
      ss >> word >> fold_id >> word;
      if (fold_id != f || word != what) {
        throw std::runtime_error(path + ": malformed manifest line '" + line + "'");
      }
      if (std::string(what) == "subjects") {
        int s;
        while (ss >> s) {
          if (s < 0 || s >= n_subjects) throw std::runtime_error(path + ": subject id out of range");
          if (plan.assignment[s] != -1) throw std::runtime_error(path + ": subject assigned twice");
          plan.assignment[s] = f;
        }
      } else {
        for (int c = 0; c < n_classes; ++c) {
          if (!(ss >> plan.per_fold_counts[f][c])) {
            throw std::runtime_error(path + ": missing class counts");
          }
        }
      }
    }
  }
  for (int s = 0; s < n_subjects; ++s) {
    if (plan.assignment[s] == -1) {
      throw std::runtime_error(path + ": subject missing from every fold");
    }
  }
  return plan;
}

}  // namespace hetero
