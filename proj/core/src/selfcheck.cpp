#include "hetero/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "hetero/core.hpp"
#include "hetero/ensemble.hpp"
#include "hetero/loss.hpp"
#include "hetero/metrics.hpp"
#include "hetero/model.hpp"
#include "hetero/rng.hpp"

namespace hetero {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Check 1: the finite-difference harness itself, against a quadratic with a
// known gradient, then against a corrupted gradient it must reject.

CheckLine check_fd_harness_positive(std::uint64_t seed) {
  CheckLine line;
  line.name = "fd-harness-accepts-correct-gradient";
  Rng rng(mix_seed(seed, 101));
  const std::size_t n = 24;
  std::vector<double> x(n), a(n), grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    a[i] = rng.normal();
  }
  auto loss = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * x[i] * x[i];
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) grad[i] = 2.0 * a[i] * x[i];
  const FdReport report = finite_difference_check(
      loss, {{"quadratic", x.data(), n, grad.data()}}, 1e-5, 1e-6, seed);
  line.pass = report.pass;
  line.detail = "max rel error " + fmt_double(report.groups.front().max_rel_error);
  return line;
}

CheckLine check_fd_harness_negative(std::uint64_t seed) {
  CheckLine line;
  line.name = "fd-harness-rejects-corrupted-gradient";
  Rng rng(mix_seed(seed, 102));
  const std::size_t n = 24;
  std::vector<double> x(n), a(n), grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.normal();
    a[i] = 1.0 + std::abs(rng.normal());
  }
  auto loss = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * x[i] * x[i];
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) grad[i] = 2.0 * a[i] * x[i];
  grad[n / 2] *= 2.0;  // corrupt one coordinate
  const FdReport report = finite_difference_check(
      loss, {{"corrupted-quadratic", x.data(), n, grad.data()}}, 1e-5, 1e-6, seed);
  line.pass = !report.pass;  // the harness must flag the corruption
  line.detail = line.pass ? "corruption detected (max rel error " +
                                fmt_double(report.groups.front().max_rel_error) + ")"
                          : "corrupted gradient slipped through";
  return line;
}

// ---------------------------------------------------------------------------
// Check 2: end-to-end analytic gradients of the composite loss on a seeded
// small instance, every parameter group against central differences.

struct TinyInstance {
  Dataset ds;
  MiniBatch batch;
  ModelParams params;
  CenterStore centers;
  LossWeights weights;
};

TinyInstance make_tiny_instance(std::uint64_t seed) {
  TinyInstance t;
  Rng rng(mix_seed(seed, 103));
  const int dim = 6;
  const int n_subjects = 4;
  const int per_subject = 3;
  t.ds.n_classes = 2;
  t.ds.n_subjects = n_subjects;
  t.ds.subject_class = {0, 0, 1, 1};
  for (int s = 0; s < n_subjects; ++s) {
    for (int i = 0; i < per_subject; ++i) {
      Sample sample;
      sample.subject = s;
      sample.class_id = t.ds.subject_class[static_cast<std::size_t>(s)];
      sample.features.resize(dim);
      for (double& v : sample.features) v = rng.normal();
      t.ds.samples.push_back(std::move(sample));
    }
  }
  std::vector<int> indices(t.ds.samples.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  t.batch = partition_batch(t.ds, indices);
  t.params = ModelParams::init(dim, {5}, 4, t.ds.n_classes, seed);
  t.centers = CenterStore::init(t.ds.n_classes, n_subjects, 4, seed);
  // Spread the centers so the pairwise term is far from its flat region.
  for (double& v : t.centers.subject_centers.data) v += rng.normal() * 0.5;
  return t;
}

CheckLine check_loss_gradients(std::uint64_t seed, bool inject_fault) {
  CheckLine line;
  line.name = "composite-loss-gradients-match-central-differences";
  TinyInstance t = make_tiny_instance(seed);
  const Matrix inputs = gather_inputs(t.ds, t.batch.indices);

  auto loss = [&]() {
    const ForwardResult fwd = forward(t.params, inputs);
    return heterogeneity_loss(t.batch, fwd.features(), t.params.head_w, t.params.head_b,
                              t.centers, t.weights)
        .total;
  };

  const ForwardResult fwd = forward(t.params, inputs);
  BackwardResult back = backward(t.params, fwd, t.batch, t.centers, t.weights);
  if (inject_fault) {
    back.grads.head_w.data.front() *= 2.0;
  }

  std::vector<FdGroup> groups;
  for (std::size_t li = 0; li < t.params.layers.size(); ++li) {
    groups.push_back({"layer" + std::to_string(li) + ".w", t.params.layers[li].w.data.data(),
                      t.params.layers[li].w.data.size(),
                      back.grads.layers[li].w.data.data()});
    groups.push_back({"layer" + std::to_string(li) + ".b", t.params.layers[li].b.data(),
                      t.params.layers[li].b.size(), back.grads.layers[li].b.data()});
  }
  groups.push_back({"head.w", t.params.head_w.data.data(), t.params.head_w.data.size(),
                    back.grads.head_w.data.data()});
  groups.push_back({"head.b", t.params.head_b.data(), t.params.head_b.size(),
                    back.grads.head_b.data()});
  groups.push_back({"class_centers", t.centers.class_centers.data.data(),
                    t.centers.class_centers.data.size(), back.d_class_centers.data.data()});
  groups.push_back({"subject_centers", t.centers.subject_centers.data.data(),
                    t.centers.subject_centers.data.size(), back.d_subject_centers.data.data()});

  const FdReport report = finite_difference_check(loss, groups, 1e-5, 1e-6, seed);
  line.pass = report.pass;
  double worst = 0.0;
  std::string worst_name;
  for (const FdGroupReport& g : report.groups) {
    if (g.max_rel_error >= worst) {
      worst = g.max_rel_error;
      worst_name = g.name;
    }
  }
  line.detail = "worst group " + worst_name + ", max rel error " + fmt_double(worst);
  return line;
}

// ---------------------------------------------------------------------------
// Check 3: the logged loss terms recombine to the logged total.

CheckLine check_loss_decomposition(std::uint64_t seed) {
  CheckLine line;
  line.name = "loss-total-equals-weighted-term-sum";
  TinyInstance t = make_tiny_instance(seed);
  const Matrix inputs = gather_inputs(t.ds, t.batch.indices);
  const ForwardResult fwd = forward(t.params, inputs);
  const LossBreakdown b = heterogeneity_loss(t.batch, fwd.features(), t.params.head_w,
                                             t.params.head_b, t.centers, t.weights);
  const double recombined = b.ce + t.weights.lambda1 * b.class_center +
                            t.weights.lambda2 * b.subject_center +
                            t.weights.lambda3 * b.subject_class;
  line.pass = recombined == b.total;
  line.detail = "total " + fmt_double(b.total) + ", recombined " + fmt_double(recombined);
  return line;
}

// ---------------------------------------------------------------------------
// Check 4: pairwise subject-center term vs a literal ordered-pair loop.

CheckLine check_pairwise_transcription(std::uint64_t seed) {
  CheckLine line;
  line.name = "pairwise-term-matches-ordered-loop-transcription";
  Rng rng(mix_seed(seed, 104));
  const int n_subjects = 6;
  const int dim = 5;
  CenterStore centers;
  centers.class_centers = Matrix(2, dim);
  centers.subject_centers = Matrix(n_subjects, dim);
  for (double& v : centers.subject_centers.data) v = rng.normal();
  const std::vector<int> subject_class = {0, 1, 0, 1, 1, 0};
  std::vector<int> present = {0, 1, 2, 3, 4, 5};

  const SubjectClassResult prod = subject_class_center_loss(present, centers, subject_class);

  // Literal transcription: sum over ordered pairs i != j, gradient of each
  // term taken with respect to both endpoints.
  double value = 0.0;
  Matrix grad(n_subjects, dim);
  for (int i = 0; i < n_subjects; ++i) {
    for (int j = 0; j < n_subjects; ++j) {
      if (i == j) continue;
      const double* ci = centers.subject_centers.row(i);
      const double* cj = centers.subject_centers.row(j);
      double dist2 = 0.0;
      for (int d = 0; d < dim; ++d) dist2 += (ci[d] - cj[d]) * (ci[d] - cj[d]);
      if (subject_class[static_cast<std::size_t>(i)] ==
          subject_class[static_cast<std::size_t>(j)]) {
        value += dist2;
        for (int d = 0; d < dim; ++d) {
          grad.at(i, d) += 2.0 * (ci[d] - cj[d]);
          grad.at(j, d) -= 2.0 * (ci[d] - cj[d]);
        }
      } else {
        value += 1.0 / (1.0 + dist2);
        const double scale = 2.0 / ((1.0 + dist2) * (1.0 + dist2));
        for (int d = 0; d < dim; ++d) {
          grad.at(i, d) -= scale * (ci[d] - cj[d]);
          grad.at(j, d) += scale * (ci[d] - cj[d]);
        }
      }
    }
  }

  double max_abs = 0.0;
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(grad.data[i] - prod.d_subject_centers.data[i]));
  }
  const double value_err = std::abs(value - prod.value) / std::max(1.0, std::abs(value));
  line.pass = value_err <= 1e-12 && max_abs <= 1e-9;
  line.detail = "value rel err " + fmt_double(value_err) + ", grad max abs err " +
                fmt_double(max_abs);
  return line;
}

// ---------------------------------------------------------------------------
// Check 5: ensemble decisions vs a direct transcription of the rule.

CheckLine check_ensemble_transcription(std::uint64_t seed) {
  CheckLine line;
  line.name = "ensemble-decision-matches-rule-transcription";
  Rng rng(mix_seed(seed, 105));
  EnsembleConfig config;
  config.theta = 0.95;
  int mismatches = 0;
  int max_vote_seen = 0;
  int harmonic_seen = 0;
  const int trials = 400;
  for (int trial = 0; trial < trials; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const int n_classes = 2 + static_cast<int>(rng.below(3));
    ModelConfidences models;
    for (int m = 0; m < k; ++m) {
      std::vector<double> p(static_cast<std::size_t>(n_classes));
      double sum = 0.0;
      for (double& v : p) {
        v = -std::log(1.0 - rng.uniform01());
        sum += v;
      }
      // Mix of sharp and flat vectors so both branches get exercised.
      if (trial % 2 == 0) {
        const int hot = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
        p[static_cast<std::size_t>(hot)] += sum * 30.0;
        sum += sum * 30.0;
      }
      for (double& v : p) v /= sum;
      models.push_back(std::move(p));
    }

    const Decision prod = decide(models, config);

    // Transcription: best model confidence, strict threshold, harmonic
    // fallback with clamp and renormalization.
    int best_model = 0;
    double best_conf = -1.0;
    for (int m = 0; m < k; ++m) {
      int arg = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (models[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)] >
            models[static_cast<std::size_t>(m)][static_cast<std::size_t>(arg)]) {
          arg = c;
        }
      }
      const double conf = models[static_cast<std::size_t>(m)][static_cast<std::size_t>(arg)];
      if (conf > best_conf) {
        best_conf = conf;
        best_model = m;
      }
    }
    DecisionRule rule;
    int cls;
    if (best_conf > config.theta) {
      rule = DecisionRule::kMaxVote;
      cls = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (models[static_cast<std::size_t>(best_model)][static_cast<std::size_t>(c)] >
            models[static_cast<std::size_t>(best_model)][static_cast<std::size_t>(cls)]) {
          cls = c;
        }
      }
      max_vote_seen += 1;
    } else {
      rule = DecisionRule::kHarmonic;
      std::vector<double> hm(static_cast<std::size_t>(n_classes));
      double total = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        double recip = 0.0;
        for (int m = 0; m < k; ++m) {
          recip += 1.0 / std::max(models[static_cast<std::size_t>(m)][static_cast<std::size_t>(c)],
                                  config.epsilon_clamp);
        }
        hm[static_cast<std::size_t>(c)] = static_cast<double>(k) / recip;
        total += hm[static_cast<std::size_t>(c)];
      }
      cls = 0;
      for (int c = 1; c < n_classes; ++c) {
        if (hm[static_cast<std::size_t>(c)] > hm[static_cast<std::size_t>(cls)]) cls = c;
      }
      (void)total;
      harmonic_seen += 1;
    }
    if (prod.rule != rule || prod.class_id != cls) mismatches += 1;
  }
  line.pass = mismatches == 0 && max_vote_seen > 0 && harmonic_seen > 0;
  line.detail = std::to_string(mismatches) + " mismatches in " + std::to_string(trials) +
                " trials (" + std::to_string(max_vote_seen) + " max-vote, " +
                std::to_string(harmonic_seen) + " harmonic)";
  return line;
}

// ---------------------------------------------------------------------------
// Check 6: weighted F1 vs a from-first-principles computation.

CheckLine check_weighted_f1(std::uint64_t seed) {
  CheckLine line;
  line.name = "weighted-f1-matches-first-principles";
  Rng rng(mix_seed(seed, 106));
  int mismatches = 0;
  const int trials = 60;
  for (int trial = 0; trial < trials; ++trial) {
    const int n_classes = 2 + static_cast<int>(rng.below(3));
    const int n = 30 + static_cast<int>(rng.below(40));
    std::vector<int> preds(static_cast<std::size_t>(n));
    std::vector<int> truths(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      preds[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
      truths[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
    }
    const EvalResult prod = weighted_f1(preds, truths, n_classes);

    double expected = 0.0;
    double support_total = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      double tp = 0, fp = 0, fn = 0, support = 0;
      for (int i = 0; i < n; ++i) {
        const bool is_truth = truths[static_cast<std::size_t>(i)] == c;
        const bool is_pred = preds[static_cast<std::size_t>(i)] == c;
        if (is_truth) support += 1;
        if (is_truth && is_pred) tp += 1;
        if (!is_truth && is_pred) fp += 1;
        if (is_truth && !is_pred) fn += 1;
      }
      const double precision = tp + fp == 0 ? 0.0 : tp / (tp + fp);
      const double recall = tp + fn == 0 ? 0.0 : tp / (tp + fn);
      const double f1 =
          precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
      expected += support * f1;
      support_total += support;
    }
    expected = support_total == 0.0 ? 0.0 : expected / support_total;
    if (std::abs(expected - prod.weighted_f1) > 1e-12) mismatches += 1;
  }
  line.pass = mismatches == 0;
  line.detail = std::to_string(mismatches) + " mismatches in " + std::to_string(trials) +
                " trials";
  return line;
}

}  // namespace

SelfCheckReport run_selfchecks(const SelfCheckOptions& options) {
  SelfCheckReport report;
  report.lines.push_back(check_fd_harness_positive(options.seed));
  report.lines.push_back(check_fd_harness_negative(options.seed));
  report.lines.push_back(check_loss_gradients(options.seed, options.inject_gradient_fault));
  report.lines.push_back(check_loss_decomposition(options.seed));
  report.lines.push_back(check_pairwise_transcription(options.seed));
  report.lines.push_back(check_ensemble_transcription(options.seed));
  report.lines.push_back(check_weighted_f1(options.seed));
  report.pass = true;
  for (const CheckLine& line : report.lines) report.pass = report.pass && line.pass;
  return report;
}

}  // namespace hetero
