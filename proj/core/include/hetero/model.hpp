#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hetero/core.hpp"
#include "hetero/loss.hpp"

namespace hetero {

/// One fully connected layer: w is (out x in), b has out entries.
struct Layer {
  Matrix w;
  std::vector<double> b;
  bool operator==(const Layer&) const = default;
};

/// Feature extractor (tanh MLP) plus linear classification head.
struct ModelParams {
  std::vector<Layer> layers;     // extractor; last layer outputs feature_dim
  Matrix head_w;                 // n_classes x feature_dim
  std::vector<double> head_b;    // n_classes
  bool operator==(const ModelParams&) const = default;

  int input_dim() const;
  int feature_dim() const;
  int n_classes() const;

  /// Seeded init: weights N(0,1)/sqrt(fan_in), biases zero.
  static ModelParams init(int input_dim, const std::vector<int>& hidden, int feature_dim,
                          int n_classes, std::uint64_t seed);
};

/// Forward pass intermediates. activations[0] is the input batch;
/// activations.back() is the deep-feature matrix fed to the head and the
/// center losses.
struct ForwardResult {
  std::vector<Matrix> activations;
  Matrix logits;  // m x n_classes
  Matrix probs;   // m x n_classes, softmax rows

  const Matrix& features() const { return activations.back(); }
};

ForwardResult forward(const ModelParams& params, const Matrix& inputs);

/// Gradients in the same shapes as ModelParams.
struct ModelGrads {
  std::vector<Layer> layers;
  Matrix head_w;
  std::vector<double> head_b;

  static ModelGrads zeros_like(const ModelParams& params);
};

struct BackwardResult {
  ModelGrads grads;
  Matrix d_class_centers;
  Matrix d_subject_centers;
  LossBreakdown breakdown;
};

/// Composite loss + full backward pass through head and extractor.
BackwardResult backward(const ModelParams& params, const ForwardResult& fwd,
                        const MiniBatch& batch, const CenterStore& centers,
                        const LossWeights& weights);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment state per parameter group, with a shared step count.
struct OptimState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;

  static OptimState init(const std::vector<std::size_t>& group_sizes);
};

/// Non-owning view of one parameter group and its gradient.
struct ParamView {
  double* values = nullptr;
  const double* grads = nullptr;
  std::size_t size = 0;
};

/// Flattened parameter/gradient views in a fixed group order: extractor
/// (w, b per layer), head w, head b, class centers, subject centers.
std::vector<ParamView> param_views(ModelParams& params, CenterStore& centers,
                                   const BackwardResult& back);
std::vector<std::size_t> param_group_sizes(const ModelParams& params, const CenterStore& centers);

/// Scales all gradients in place so their global L2 norm is at most
/// max_norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

/// One Adam update with bias correction over all views. Returns false and
/// changes nothing if any gradient coordinate is non-finite.
bool adam_step(const std::vector<ParamView>& views, OptimState& state, const AdamConfig& config);

struct TrainConfig {
  double stage1_lr = 1e-3;
  double stage2_lr = 1e-5;
  int batch_size = 16;
  LossWeights weights;
  int stage1_max_epochs = 20;
  int stage2_max_epochs = 10;
  int patience = 10;
  std::vector<int> hidden = {32, 32};
  int feature_dim = 16;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  bool operator==(const TrainConfig&) const = default;
};

/// One optimizer step's loss terms plus the epoch-end validation score
/// (present on the last step of each epoch, NaN elsewhere).
struct EpochLog {
  int stage = 0;
  int epoch = 0;
  long long step = 0;
  double ce = 0.0;
  double class_center = 0.0;
  double subject_center = 0.0;
  double subject_class = 0.0;
  double total = 0.0;
  double val_wf1 = 0.0;
};

struct Checkpoint {
  ModelParams params;
  CenterStore centers;
  TrainConfig config;
  double val_weighted_f1 = 0.0;
  int stage = 0;
  int epoch = 0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  bool aborted = false;
  std::string abort_reason;
};

/// Two-stage training: stage 1 at stage1_lr from scratch, stage 2 at
/// stage2_lr resuming from the stage-1 best checkpoint with fresh optimizer
/// state. Each stage stops early when validation weighted F1 has not
/// improved for `patience` epochs; the best checkpoint across both stages
/// is returned. A non-finite loss aborts the current stage, keeping the
/// last good checkpoint.
TrainResult train_two_stage(const Dataset& ds, const std::vector<int>& train_indices,
                            const std::vector<int>& val_indices, const TrainConfig& config);

/// Class probabilities for each input row. With views > 1 and jitter > 0,
/// probabilities are averaged over `views` seeded Gaussian perturbations of
/// the inputs; views == 1 or jitter == 0 is a plain forward pass.
Matrix predict_proba(const ModelParams& params, const Matrix& inputs, int views, double jitter,
                     std::uint64_t seed);

/// Weighted F1 of argmax predictions on the given samples.
double validation_weighted_f1(const ModelParams& params, const Dataset& ds,
                              const std::vector<int>& indices);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hetero
