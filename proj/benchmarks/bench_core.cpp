// Microbenchmarks for the hot paths: composite loss, forward/backward,
// fold planning, ensemble decisions, and metrics.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "hetero/core.hpp"
#include "hetero/ensemble.hpp"
#include "hetero/loss.hpp"
#include "hetero/metrics.hpp"
#include "hetero/model.hpp"
#include "hetero/rng.hpp"
#include "hetero/sampler.hpp"
#include "hetero/synthdata.hpp"

namespace {

using namespace hetero;

struct BatchFixture {
  Dataset ds;
  MiniBatch batch;
  ModelParams params;
  CenterStore centers;
  LossWeights weights;
  Matrix inputs;

  explicit BatchFixture(int batch_size) {
    const Generated gen = generate(GenConfig::benchmark_default(1));
    ds = gen.dataset;
    std::vector<int> all(ds.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const std::vector<MiniBatch> batches = minibatch_iter(ds, all, batch_size, 7, 0);
    batch = batches.front();
    params = ModelParams::init(ds.dim(), {32, 32}, 16, ds.n_classes, 11);
    centers = CenterStore::init(ds.n_classes, ds.n_subjects, 16, 13);
    inputs = gather_inputs(ds, batch.indices);
  }
};

void BM_CompositeLoss(benchmark::State& state) {
  BatchFixture fx(static_cast<int>(state.range(0)));
  const ForwardResult fwd = forward(fx.params, fx.inputs);
  for (auto _ : state) {
    const LossBreakdown b = heterogeneity_loss(fx.batch, fwd.features(), fx.params.head_w,
                                               fx.params.head_b, fx.centers, fx.weights);
    benchmark::DoNotOptimize(b.total);
  }
}
BENCHMARK(BM_CompositeLoss)->Arg(16)->Arg(64);

void BM_ForwardBackward(benchmark::State& state) {
  BatchFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    const ForwardResult fwd = forward(fx.params, fx.inputs);
    const BackwardResult back = backward(fx.params, fwd, fx.batch, fx.centers, fx.weights);
    benchmark::DoNotOptimize(back.breakdown.total);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64);

void BM_TrainEpoch(benchmark::State& state) {
  const Generated gen = generate(GenConfig::benchmark_default(1));
  const Dataset& ds = gen.dataset;
  const FoldPlan plan = stratified_subject_folds(ds, 7, 1);
  const auto [train_idx, val_idx] = fold_train_val(ds, plan, 0);
  TrainConfig config;
  config.stage1_max_epochs = 1;
  config.stage2_max_epochs = 0;
  config.seed = 3;
  for (auto _ : state) {
    const TrainResult result = train_two_stage(ds, train_idx, val_idx, config);
    benchmark::DoNotOptimize(result.best.val_weighted_f1);
  }
}
BENCHMARK(BM_TrainEpoch);

void BM_FoldPlanning(benchmark::State& state) {
  const Generated gen = generate(GenConfig::cohort101(5));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const FoldPlan plan = stratified_subject_folds(gen.dataset, 7, ++seed);
    benchmark::DoNotOptimize(plan.achieved_ratio);
  }
}
BENCHMARK(BM_FoldPlanning);

void BM_Generate(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const Generated gen = generate(GenConfig::benchmark_default(++seed));
    benchmark::DoNotOptimize(gen.dataset.samples.size());
  }
}
BENCHMARK(BM_Generate);

void BM_EnsembleDecide(benchmark::State& state) {
  Rng rng(17);
  const int n_samples = 1000;
  const int k = 7;
  std::vector<ModelConfidences> samples;
  for (int i = 0; i < n_samples; ++i) {
    ModelConfidences models;
    for (int m = 0; m < k; ++m) {
      const double p = 0.5 + 0.5 * rng.uniform01();
      models.push_back({p, 1.0 - p});
    }
    samples.push_back(std::move(models));
  }
  EnsembleConfig config;
  for (auto _ : state) {
    int votes = 0;
    for (const ModelConfidences& models : samples) {
      votes += decide(models, config).class_id;
    }
    benchmark::DoNotOptimize(votes);
  }
}
BENCHMARK(BM_EnsembleDecide);

void BM_WeightedF1(benchmark::State& state) {
  Rng rng(19);
  const int n = 10000;
  std::vector<int> preds(n), truths(n);
  for (int i = 0; i < n; ++i) {
    preds[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
    truths[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(2));
  }
  for (auto _ : state) {
    const EvalResult r = weighted_f1(preds, truths, 2);
    benchmark::DoNotOptimize(r.weighted_f1);
  }
}
BENCHMARK(BM_WeightedF1);

}  // namespace

BENCHMARK_MAIN();
