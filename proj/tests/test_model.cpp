#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetero/core.hpp"
#include "hetero/loss.hpp"
#include "hetero/metrics.hpp"
#include "hetero/model.hpp"
#include "hetero/rng.hpp"
#include "test_support.hpp"

using namespace hetero;

namespace {

/// Dataset where class c's features cluster tightly around +/-offset, so a
/// linear boundary separates the classes perfectly.
Dataset separable_dataset(int subjects_per_class, int samples_per_subject, double offset,
                          std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  Dataset ds;
  ds.n_classes = 2;
  ds.n_subjects = 2 * subjects_per_class;
  for (int s = 0; s < ds.n_subjects; ++s) {
    const int cls = s % 2;
    ds.subject_class.push_back(cls);
    for (int i = 0; i < samples_per_subject; ++i) {
      Sample sample;
      sample.subject = s;
      sample.class_id = cls;
      const double mean = cls == 0 ? offset : -offset;
      sample.features = {mean + noise(eng), mean + noise(eng)};
      ds.samples.push_back(sample);
    }
  }
  return ds;
}

std::vector<int> subject_indices(const Dataset& ds, const std::vector<int>& subjects) {
  std::vector<int> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (int s : subjects) {
      if (ds.samples[i].subject == s) out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

bool all_finite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("seeded initialization is deterministic with zero biases and scaled weights") {
  const ModelParams a = ModelParams::init(6, {8, 5}, 4, 3, 11);
  const ModelParams b = ModelParams::init(6, {8, 5}, 4, 3, 11);
  const ModelParams c = ModelParams::init(6, {8, 5}, 4, 3, 12);
  CHECK(a == b);
  CHECK_FALSE(a == c);

  CHECK(a.input_dim() == 6);
  CHECK(a.feature_dim() == 4);
  CHECK(a.n_classes() == 3);
  REQUIRE(a.layers.size() == 3);  // 6->8, 8->5, 5->4
  CHECK(a.layers[0].w.rows == 8);
  CHECK(a.layers[0].w.cols == 6);
  CHECK(a.layers[1].w.rows == 5);
  CHECK(a.layers[1].w.cols == 8);
  CHECK(a.layers[2].w.rows == 4);
  CHECK(a.layers[2].w.cols == 5);
  CHECK(a.head_w.rows == 3);
  CHECK(a.head_w.cols == 4);

  for (const Layer& layer : a.layers) {
    for (double v : layer.b) CHECK(v == 0.0);
  }
  for (double v : a.head_b) CHECK(v == 0.0);

  // Fan-in scaling keeps first-layer weights on the order of 1/sqrt(6).
  double max_abs = 0.0;
  for (double v : a.layers[0].w.data) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs < 5.0 / std::sqrt(6.0));
  CHECK(max_abs > 0.0);
}

TEST_CASE("zero head yields uniform class probabilities") {
  ModelParams params = ModelParams::init(4, {6}, 3, 3, 21);
  for (double& v : params.head_w.data) v = 0.0;
  for (double& v : params.head_b) v = 0.0;

  std::mt19937_64 eng(22);
  const Matrix inputs = testutil::random_matrix(5, 4, eng);
  const ForwardResult fwd = forward(params, inputs);
  for (int i = 0; i < 5; ++i) {
    for (int c = 0; c < 3; ++c) {
      CHECK(fwd.probs.at(i, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
      CHECK(fwd.logits.at(i, c) == 0.0);
    }
  }
}

TEST_CASE("forward pass matches a direct matrix-arithmetic transcription") {
  const ModelParams params = ModelParams::init(5, {7, 6}, 4, 2, 31);
  std::mt19937_64 eng(32);
  const Matrix inputs = testutil::random_matrix(6, 5, eng);
  const ForwardResult fwd = forward(params, inputs);

  REQUIRE(fwd.activations.size() == params.layers.size() + 1);
  CHECK(fwd.activations[0] == inputs);
  CHECK(&fwd.features() == &fwd.activations.back());

  // Recompute layer by layer with std::tanh.
  Matrix a = inputs;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const Layer& layer = params.layers[li];
    Matrix next(a.rows, layer.w.rows);
    for (int i = 0; i < a.rows; ++i) {
      for (int o = 0; o < layer.w.rows; ++o) {
        double z = layer.b[static_cast<std::size_t>(o)];
        for (int j = 0; j < a.cols; ++j) z += layer.w.at(o, j) * a.at(i, j);
        next.at(i, o) = std::tanh(z);
      }
    }
    for (std::size_t k = 0; k < next.data.size(); ++k) {
      CHECK(fwd.activations[li + 1].data[k] == doctest::Approx(next.data[k]).epsilon(1e-12));
    }
    a = next;
  }

  for (int i = 0; i < a.rows; ++i) {
    std::vector<double> z(2, 0.0);
    for (int c = 0; c < 2; ++c) {
      z[c] = params.head_b[static_cast<std::size_t>(c)];
      for (int j = 0; j < a.cols; ++j) z[c] += params.head_w.at(c, j) * a.at(i, j);
      CHECK(fwd.logits.at(i, c) == doctest::Approx(z[c]).epsilon(1e-12));
    }
    const double denom = std::exp(z[0]) + std::exp(z[1]);
    CHECK(fwd.probs.at(i, 0) == doctest::Approx(std::exp(z[0]) / denom).epsilon(1e-12));
    CHECK(fwd.probs.at(i, 1) == doctest::Approx(std::exp(z[1]) / denom).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows always sum to one") {
  const ModelParams params = ModelParams::init(8, {16, 16}, 6, 4, 41);
  std::mt19937_64 eng(42);
  const Matrix inputs = testutil::random_matrix(20, 8, eng, 3.0);
  const ForwardResult fwd = forward(params, inputs);
  for (int i = 0; i < fwd.probs.rows; ++i) {
    double sum = 0.0;
    for (int c = 0; c < fwd.probs.cols; ++c) {
      sum += fwd.probs.at(i, c);
      CHECK(fwd.probs.at(i, c) >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backward gradients agree with central differences on every block") {
  Dataset ds = testutil::random_dataset(2, 4, 4, 3, 51);
  std::vector<int> idx{0, 2, 4, 6, 8, 10};
  const MiniBatch batch = partition_batch(ds, idx);
  const Matrix inputs = gather_inputs(ds, idx);
  ModelParams params = ModelParams::init(4, {5}, 3, 2, 52);
  CenterStore centers = CenterStore::init(2, 4, 3, 53);
  // Spread the centers so the pairwise term is active and well-conditioned.
  std::mt19937_64 eng(54);
  centers.class_centers = testutil::random_matrix(2, 3, eng);
  centers.subject_centers = testutil::random_matrix(4, 3, eng);
  const LossWeights weights;

  const ForwardResult fwd = forward(params, inputs);
  const BackwardResult back = backward(params, fwd, batch, centers, weights);

  auto loss_fn = [&]() {
    const ForwardResult f = forward(params, inputs);
    return backward(params, f, batch, centers, weights).breakdown.total;
  };
  std::vector<FdGroup> groups;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    groups.push_back({"layer" + std::to_string(li) + "_w", params.layers[li].w.data.data(),
                      params.layers[li].w.data.size(), back.grads.layers[li].w.data.data()});
    groups.push_back({"layer" + std::to_string(li) + "_b", params.layers[li].b.data(),
                      params.layers[li].b.size(), back.grads.layers[li].b.data()});
  }
  groups.push_back({"head_w", params.head_w.data.data(), params.head_w.data.size(),
                    back.grads.head_w.data.data()});
  groups.push_back({"head_b", params.head_b.data(), params.head_b.size(),
                    back.grads.head_b.data()});
  groups.push_back({"class_centers", centers.class_centers.data.data(),
                    centers.class_centers.data.size(), back.d_class_centers.data.data()});
  groups.push_back({"subject_centers", centers.subject_centers.data.data(),
                    centers.subject_centers.data.size(), back.d_subject_centers.data.data()});

  const FdReport report = finite_difference_check(loss_fn, groups, 1e-5, 1e-5);
  for (const FdGroupReport& g : report.groups) {
    INFO(g.name << " max relative error " << g.max_rel_error);
    CHECK(g.pass);
  }
  CHECK(report.pass);
}

TEST_CASE("class-center gradients scale linearly with their weight") {
  Dataset ds = testutil::random_dataset(2, 4, 3, 3, 61);
  std::vector<int> idx{0, 1, 3, 5, 7, 9};
  const MiniBatch batch = partition_batch(ds, idx);
  const Matrix inputs = gather_inputs(ds, idx);
  const ModelParams params = ModelParams::init(3, {5}, 3, 2, 62);
  const CenterStore centers = CenterStore::init(2, 4, 3, 63);
  const ForwardResult fwd = forward(params, inputs);

  LossWeights base;
  LossWeights doubled = base;
  doubled.lambda1 = 2.0 * base.lambda1;
  const BackwardResult r1 = backward(params, fwd, batch, centers, base);
  const BackwardResult r2 = backward(params, fwd, batch, centers, doubled);
  for (std::size_t i = 0; i < r1.d_class_centers.data.size(); ++i) {
    CHECK(r2.d_class_centers.data[i] ==
          doctest::Approx(2.0 * r1.d_class_centers.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("first optimizer step moves each weight by roughly lr in the gradient direction") {
  std::vector<double> p{0.0, 0.0};
  const std::vector<double> g{0.3, -4.0};
  std::vector<ParamView> views{{p.data(), g.data(), p.size()}};
  OptimState state = OptimState::init({p.size()});
  AdamConfig config;

  REQUIRE(adam_step(views, state, config));
  CHECK(state.step == 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    // With fresh moments, mhat = g and vhat = g^2, so the update is
    // -lr * g / (|g| + eps): lr times the gradient sign, almost exactly.
    const double expected = -config.lr * g[i] / (std::abs(g[i]) + config.epsilon);
    CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(p[i] + config.lr * (g[i] > 0 ? 1.0 : -1.0)) < 1e-6);
  }
}

TEST_CASE("zero gradients leave parameters untouched") {
  std::vector<double> p{1.5, -2.5};
  const std::vector<double> g{0.0, 0.0};
  std::vector<ParamView> views{{p.data(), g.data(), p.size()}};
  OptimState state = OptimState::init({p.size()});
  AdamConfig config;
  REQUIRE(adam_step(views, state, config));
  CHECK(p[0] == 1.5);
  CHECK(p[1] == -2.5);
  CHECK(state.step == 1);
}

TEST_CASE("optimizer drives a convex quadratic toward its minimum") {
  std::mt19937_64 eng(71);
  std::vector<double> p = testutil::random_vector(6, eng, 2.0);
  std::vector<double> g(p.size());
  std::vector<ParamView> views{{p.data(), g.data(), p.size()}};
  OptimState state = OptimState::init({p.size()});
  AdamConfig config;
  config.lr = 0.05;

  auto value = [&]() {
    double s = 0.0;
    for (double x : p) s += x * x;
    return s;
  };
  const double initial = value();
  double previous = initial;
  for (int step = 0; step < 100; ++step) {
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * p[i];
    REQUIRE(adam_step(views, state, config));
    const double now = value();
    if (step >= 5) CHECK(now < previous);
    previous = now;
  }
  CHECK(previous < 0.01 * initial);
}

TEST_CASE("a non-finite gradient rejects the step and changes nothing") {
  std::vector<double> p{1.0, 2.0};
  std::vector<double> g{0.5, std::numeric_limits<double>::quiet_NaN()};
  std::vector<ParamView> views{{p.data(), g.data(), p.size()}};
  OptimState state = OptimState::init({p.size()});
  AdamConfig config;

  CHECK_FALSE(adam_step(views, state, config));
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  CHECK(state.step == 0);
  CHECK(state.m[0][0] == 0.0);

  g[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(adam_step(views, state, config));
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping rescales only when the norm exceeds the cap") {
  std::vector<std::vector<double>> grads{{3.0, 0.0}, {0.0, 4.0}};  // norm 5
  CHECK(clip_global_norm(grads, 10.0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(grads[0][0] == 3.0);  // untouched below the cap
  CHECK(grads[1][1] == 4.0);

  CHECK(clip_global_norm(grads, 2.5) == doctest::Approx(5.0).epsilon(1e-15));
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  CHECK(std::sqrt(sq) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(grads[0][0] == doctest::Approx(1.5).epsilon(1e-12));

  CHECK_THROWS_AS(clip_global_norm(grads, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_global_norm(grads, -1.0), std::invalid_argument);
}

TEST_CASE("parameter views expose every group in declaration order") {
  ModelParams params = ModelParams::init(3, {4}, 2, 2, 81);
  CenterStore centers = CenterStore::init(2, 3, 2, 82);
  const std::vector<std::size_t> sizes = param_group_sizes(params, centers);
  // layer w, layer b, feature layer w, feature layer b, head w, head b,
  // class centers, subject centers.
  REQUIRE(sizes.size() == 2 * params.layers.size() + 4);

  Dataset ds = testutil::random_dataset(2, 3, 3, 2, 83);
  const MiniBatch batch = partition_batch(ds, {0, 1, 2, 3});
  const Matrix inputs = gather_inputs(ds, {0, 1, 2, 3});
  const ForwardResult fwd = forward(params, inputs);
  const BackwardResult back = backward(params, fwd, batch, centers, LossWeights{});
  const std::vector<ParamView> views = param_views(params, centers, back);
  REQUIRE(views.size() == sizes.size());
  for (std::size_t i = 0; i < views.size(); ++i) CHECK(views[i].size == sizes[i]);

  // Views alias the live parameters: writing through them must be visible.
  views[0].values[0] = 123.0;
  CHECK(params.layers[0].w.data[0] == 123.0);
  views.back().values[0] = -7.0;
  CHECK(centers.subject_centers.data[0] == -7.0);

  OptimState state = OptimState::init(sizes);
  CHECK(state.step == 0);
  REQUIRE(state.m.size() == sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    CHECK(state.m[i].size() == sizes[i]);
    CHECK(state.v[i].size() == sizes[i]);
    for (double v : state.m[i]) CHECK(v == 0.0);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  Dataset ds = separable_dataset(2, 6, 2.0, 91);
  const std::vector<int> train = subject_indices(ds, {0, 1});
  const std::vector<int> val = subject_indices(ds, {2, 3});
  TrainConfig config;
  config.hidden = {8};
  config.feature_dim = 4;
  config.batch_size = 4;
  config.stage1_max_epochs = 4;
  config.stage2_max_epochs = 2;
  config.patience = 3;
  config.seed = 99;

  const TrainResult a = train_two_stage(ds, train, val, config);
  const TrainResult b = train_two_stage(ds, train, val, config);
  CHECK(a.best.params == b.best.params);
  CHECK(a.best.centers.class_centers == b.best.centers.class_centers);
  CHECK(a.best.centers.subject_centers == b.best.centers.subject_centers);
  CHECK(a.best.val_weighted_f1 == b.best.val_weighted_f1);
  CHECK(a.history.size() == b.history.size());
  REQUIRE(!a.history.empty());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
  }

  TrainConfig other = config;
  other.seed = 100;
  const TrainResult c = train_two_stage(ds, train, val, other);
  CHECK_FALSE(a.best.params == c.best.params);
}

TEST_CASE("easily separable classes reach a perfect training score") {
  Dataset ds = separable_dataset(2, 8, 4.0, 101);
  const std::vector<int> train = subject_indices(ds, {0, 1});
  const std::vector<int> val = subject_indices(ds, {2, 3});
  TrainConfig config;
  config.hidden = {8};
  config.feature_dim = 4;
  config.batch_size = 4;
  config.stage1_max_epochs = 300;
  config.stage2_max_epochs = 0;
  config.patience = 300;  // no early stop: give the optimizer its full budget
  config.seed = 5;

  const TrainResult r = train_two_stage(ds, train, val, config);
  CHECK_FALSE(r.aborted);
  CHECK(r.best.val_weighted_f1 == doctest::Approx(1.0));
  CHECK(validation_weighted_f1(r.best.params, ds, train) == doctest::Approx(1.0));
  CHECK(r.best.stage == 1);
  CHECK(r.best.epoch >= 0);
}

TEST_CASE("stage two resumes from the stage-one best and early-stops on a plateau") {
  Dataset ds = separable_dataset(2, 6, 3.0, 111);
  const std::vector<int> train = subject_indices(ds, {0, 1});
  const std::vector<int> val = subject_indices(ds, {2, 3});
  TrainConfig config;
  config.hidden = {8};
  config.feature_dim = 4;
  config.batch_size = 6;
  config.stage1_max_epochs = 6;
  config.stage2_max_epochs = 10;
  config.stage2_lr = 0.0;  // freezes stage two at the resumed checkpoint
  config.patience = 2;
  config.seed = 17;

  const TrainResult r = train_two_stage(ds, train, val, config);
  CHECK_FALSE(r.aborted);

  // With a zero learning rate, stage two evaluates the stage-one best
  // checkpoint verbatim: every stage-two validation equals the best score,
  // never beats it, and the plateau trips the patience stop after exactly
  // `patience` epochs.
  CHECK(r.best.stage == 1);
  int stage2_epochs = 0;
  for (const EpochLog& log : r.history) {
    if (log.stage == 2 && std::isfinite(log.val_wf1)) {
      CHECK(log.val_wf1 == doctest::Approx(r.best.val_weighted_f1).epsilon(1e-15));
      ++stage2_epochs;
    }
  }
  CHECK(stage2_epochs == config.patience);
}

TEST_CASE("epoch logs mark validation only on each epoch's final step") {
  Dataset ds = separable_dataset(2, 8, 2.0, 121);
  const std::vector<int> train = subject_indices(ds, {0, 1});  // 16 samples, 2 batches
  const std::vector<int> val = subject_indices(ds, {2, 3});
  TrainConfig config;
  config.hidden = {6};
  config.feature_dim = 3;
  config.batch_size = 8;
  config.stage1_max_epochs = 3;
  config.stage2_max_epochs = 0;
  config.patience = 5;
  config.seed = 7;

  const TrainResult r = train_two_stage(ds, train, val, config);
  REQUIRE(!r.history.empty());
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    const bool epoch_end = i + 1 == r.history.size() ||
                           r.history[i + 1].epoch != r.history[i].epoch ||
                           r.history[i + 1].stage != r.history[i].stage;
    if (epoch_end) {
      CHECK(std::isfinite(r.history[i].val_wf1));
    } else {
      CHECK(std::isnan(r.history[i].val_wf1));
    }
    CHECK(std::isfinite(r.history[i].total));
    CHECK(r.history[i].step == static_cast<long long>(i) + 1);
  }
}

TEST_CASE("a poisoned batch aborts training and keeps the last good checkpoint") {
  Dataset ds = separable_dataset(1, 4, 2.0, 131);  // subjects 0,1: 8 samples
  ds.samples[2].features[0] = std::numeric_limits<double>::quiet_NaN();
  const std::vector<int> train = subject_indices(ds, {0, 1});
  std::vector<int> val{0, 4};  // evaluation reuses clean samples
  TrainConfig config;
  config.hidden = {4};
  config.feature_dim = 2;
  config.batch_size = 8;  // single batch per epoch, always poisoned
  config.stage1_max_epochs = 4;
  config.stage2_max_epochs = 2;
  config.seed = 3;

  const TrainResult r = train_two_stage(ds, train, val, config);
  CHECK(r.aborted);
  CHECK(r.abort_reason.find("non-finite") != std::string::npos);
  CHECK(r.best.val_weighted_f1 == 0.0);  // no epoch ever completed
  CHECK(r.history.empty());
  for (const Layer& layer : r.best.params.layers) {
    CHECK(all_finite(layer.w.data));
    CHECK(all_finite(layer.b));
  }
  CHECK(all_finite(r.best.params.head_w.data));
}

TEST_CASE("training rejects empty index sets and bad hyperparameters") {
  Dataset ds = separable_dataset(1, 2, 2.0, 141);
  const std::vector<int> train{0, 1, 2, 3};
  const std::vector<int> val{0, 1};
  TrainConfig config;
  CHECK_THROWS_AS(train_two_stage(ds, {}, val, config), std::invalid_argument);
  CHECK_THROWS_AS(train_two_stage(ds, train, {}, config), std::invalid_argument);
  TrainConfig bad_batch = config;
  bad_batch.batch_size = 0;
  CHECK_THROWS_AS(train_two_stage(ds, train, val, bad_batch), std::invalid_argument);
  TrainConfig bad_patience = config;
  bad_patience.patience = 0;
  CHECK_THROWS_AS(train_two_stage(ds, train, val, bad_patience), std::invalid_argument);
}

TEST_CASE("checkpoints survive a save-load-save round trip byte for byte") {
  testutil::TempDir tmp("ckpt");
  Checkpoint ckpt;
  ckpt.params = ModelParams::init(5, {7, 6}, 4, 3, 151);
  ckpt.centers = CenterStore::init(3, 9, 4, 152);
  ckpt.config.hidden = {7, 6};
  ckpt.config.feature_dim = 4;
  ckpt.config.seed = 151;
  ckpt.val_weighted_f1 = 0.8251;
  ckpt.stage = 2;
  ckpt.epoch = 13;

  const std::string first = tmp.file("a.ckpt");
  const std::string second = tmp.file("b.ckpt");
  save_checkpoint(ckpt, first);
  const Checkpoint loaded = load_checkpoint(first);
  CHECK(loaded.params == ckpt.params);
  CHECK(loaded.centers.class_centers == ckpt.centers.class_centers);
  CHECK(loaded.centers.subject_centers == ckpt.centers.subject_centers);
  CHECK(loaded.config == ckpt.config);
  CHECK(loaded.val_weighted_f1 == ckpt.val_weighted_f1);
  CHECK(loaded.stage == 2);
  CHECK(loaded.epoch == 13);

  save_checkpoint(loaded, second);
  std::ifstream fa(first, std::ios::binary);
  std::ifstream fb(second, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(fa)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(fb)),
                            std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK_FALSE(bytes_a.empty());
}

TEST_CASE("malformed checkpoint files are rejected") {
  testutil::TempDir tmp("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), std::runtime_error);

  const std::string junk = tmp.file("junk.ckpt");
  {
    std::ofstream out(junk, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(junk),
                       doctest::Contains("not a checkpoint"), std::runtime_error);

  Checkpoint ckpt;
  ckpt.params = ModelParams::init(3, {4}, 2, 2, 161);
  ckpt.centers = CenterStore::init(2, 3, 2, 162);
  ckpt.config.hidden = {4};
  ckpt.config.feature_dim = 2;
  const std::string good = tmp.file("good.ckpt");
  save_checkpoint(ckpt, good);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  const std::string truncated = tmp.file("truncated.ckpt");
  {
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(truncated), std::runtime_error);

  const std::string padded = tmp.file("padded.ckpt");
  {
    std::ofstream out(padded, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out << 'x';
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(padded), doctest::Contains("trailing"),
                       std::runtime_error);
}

TEST_CASE("prediction without augmentation is a plain forward pass") {
  const ModelParams params = ModelParams::init(4, {6}, 3, 2, 171);
  std::mt19937_64 eng(172);
  const Matrix inputs = testutil::random_matrix(7, 4, eng);
  const Matrix plain = forward(params, inputs).probs;

  CHECK(predict_proba(params, inputs, 1, 0.5, 9) == plain);
  CHECK(predict_proba(params, inputs, 5, 0.0, 9) == plain);
  CHECK_THROWS_AS(predict_proba(params, inputs, 0, 0.1, 9), std::invalid_argument);
  CHECK_THROWS_AS(predict_proba(params, inputs, 3, -0.1, 9), std::invalid_argument);
}

TEST_CASE("augmented prediction averages seeded perturbed views") {
  const ModelParams params = ModelParams::init(4, {6}, 3, 2, 181);
  std::mt19937_64 eng(182);
  const Matrix inputs = testutil::random_matrix(5, 4, eng);
  const int views = 3;
  const double jitter = 0.1;
  const std::uint64_t seed = 77;

  const Matrix got = predict_proba(params, inputs, views, jitter, seed);

  // Transcribe the documented scheme: one stream of Gaussian perturbations,
  // consumed view by view across the whole input matrix.
  Rng rng(mix_seed(seed, seed_tag::tta));
  Matrix expected(inputs.rows, 2);
  Matrix perturbed(inputs.rows, inputs.cols);
  for (int v = 0; v < views; ++v) {
    for (std::size_t i = 0; i < inputs.data.size(); ++i) {
      perturbed.data[i] = inputs.data[i] + rng.normal() * jitter;
    }
    const ForwardResult fwd = forward(params, perturbed);
    for (std::size_t i = 0; i < expected.data.size(); ++i) {
      expected.data[i] += fwd.probs.data[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(views);
  for (double& p : expected.data) p *= inv;
  CHECK(got == expected);

  // Deterministic in the seed, and rows still sum to one.
  CHECK(predict_proba(params, inputs, views, jitter, seed) == got);
  CHECK_FALSE(predict_proba(params, inputs, views, jitter, seed + 1) == got);
  for (int i = 0; i < got.rows; ++i) {
    double sum = 0.0;
    for (int c = 0; c < got.cols; ++c) sum += got.at(i, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("validation score equals the metric applied to argmax predictions") {
  Dataset ds = testutil::random_dataset(3, 6, 4, 4, 191);
  std::vector<int> idx;
  for (int i = 0; i < 18; ++i) idx.push_back(i);
  const ModelParams params = ModelParams::init(4, {8}, 4, 3, 192);

  const double got = validation_weighted_f1(params, ds, idx);

  const Matrix inputs = gather_inputs(ds, idx);
  const ForwardResult fwd = forward(params, inputs);
  std::vector<int> preds, truths;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    preds.push_back(argmax_index(fwd.probs.row(static_cast<int>(i)), fwd.probs.cols));
    truths.push_back(ds.samples[static_cast<std::size_t>(idx[i])].class_id);
  }
  CHECK(got == weighted_f1(preds, truths, ds.n_classes).weighted_f1);
  CHECK_THROWS_AS(validation_weighted_f1(params, ds, {}), std::invalid_argument);
}
