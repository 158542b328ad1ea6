#include "hetero/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "hetero/metrics.hpp"
#include "hetero/rng.hpp"
#include "hetero/sampler.hpp"

namespace hetero {
namespace {

constexpr char kCheckpointMagic[8] = {'h', 'e', 't', 'c', 'k', 'p', 't', '1'};

// out (m x rows_w) = in (m x cols_w) * w^T + broadcast b, for layer weights
// stored as (out_dim x in_dim).
Matrix affine_forward(const Matrix& in, const Matrix& w, const std::vector<double>& b) {
  Matrix out(in.rows, w.rows);
  for (int i = 0; i < in.rows; ++i) {
    const double* x = in.row(i);
    double* y = out.row(i);
    for (int o = 0; o < w.rows; ++o) {
      double z = b[static_cast<std::size_t>(o)];
      const double* wo = w.row(o);
      for (int j = 0; j < w.cols; ++j) z += wo[j] * x[j];
      y[o] = z;
    }
  }
  return out;
}

void write_bytes(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) {
    throw std::runtime_error("short write to " + path);
  }
}

void read_bytes(std::FILE* f, void* p, std::size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n) {
    throw std::runtime_error("unexpected end of checkpoint file " + path);
  }
}

void write_i64(std::FILE* f, long long v, const std::string& path) {
  write_bytes(f, &v, sizeof(v), path);
}

long long read_i64(std::FILE* f, const std::string& path) {
  long long v = 0;
  read_bytes(f, &v, sizeof(v), path);
  return v;
}

void write_f64(std::FILE* f, double v, const std::string& path) {
  write_bytes(f, &v, sizeof(v), path);
}

double read_f64(std::FILE* f, const std::string& path) {
  double v = 0;
  read_bytes(f, &v, sizeof(v), path);
  return v;
}

void write_matrix(std::FILE* f, const Matrix& m, const std::string& path) {
  write_i64(f, m.rows, path);
  write_i64(f, m.cols, path);
  if (!m.data.empty()) write_bytes(f, m.data.data(), m.data.size() * sizeof(double), path);
}

Matrix read_matrix(std::FILE* f, const std::string& path) {
  const long long rows = read_i64(f, path);
  const long long cols = read_i64(f, path);
  if (rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24)) {
    throw std::runtime_error("corrupt matrix header in " + path);
  }
  Matrix m(static_cast<int>(rows), static_cast<int>(cols));
  if (!m.data.empty()) read_bytes(f, m.data.data(), m.data.size() * sizeof(double), path);
  return m;
}

void write_vec(std::FILE* f, const std::vector<double>& v, const std::string& path) {
  write_i64(f, static_cast<long long>(v.size()), path);
  if (!v.empty()) write_bytes(f, v.data(), v.size() * sizeof(double), path);
}

std::vector<double> read_vec(std::FILE* f, const std::string& path) {
  const long long n = read_i64(f, path);
  if (n < 0 || n > (1 << 28)) throw std::runtime_error("corrupt vector header in " + path);
  std::vector<double> v(static_cast<std::size_t>(n));
  if (!v.empty()) read_bytes(f, v.data(), v.size() * sizeof(double), path);
  return v;
}

struct StageOutcome {
  bool aborted = false;
  std::string abort_reason;
};

}  // namespace

int ModelParams::input_dim() const {
  return layers.empty() ? head_w.cols : layers.front().w.cols;
}

int ModelParams::feature_dim() const { return head_w.cols; }

int ModelParams::n_classes() const { return head_w.rows; }

ModelParams ModelParams::init(int input_dim, const std::vector<int>& hidden, int feature_dim,
                              int n_classes, std::uint64_t seed) {
  if (input_dim < 1 || feature_dim < 1 || n_classes < 2) {
    throw std::invalid_argument("model init needs input_dim >= 1, feature_dim >= 1, n_classes >= 2");
  }
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden layer width must be >= 1");
  }
  ModelParams params;
  Rng rng(mix_seed(seed, seed_tag::model_init));
  std::vector<int> widths;
  widths.push_back(input_dim);
  for (int h : hidden) widths.push_back(h);
  widths.push_back(feature_dim);

  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Layer layer;
    layer.w = Matrix(widths[i + 1], widths[i]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    for (double& v : layer.w.data) v = rng.normal() * scale;
    layer.b.assign(static_cast<std::size_t>(widths[i + 1]), 0.0);
    params.layers.push_back(std::move(layer));
  }
  params.head_w = Matrix(n_classes, feature_dim);
  const double head_scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : params.head_w.data) v = rng.normal() * head_scale;
  params.head_b.assign(static_cast<std::size_t>(n_classes), 0.0);
  return params;
}

ForwardResult forward(const ModelParams& params, const Matrix& inputs) {
  if (inputs.cols != params.input_dim()) {
    throw std::invalid_argument("forward: input dim " + std::to_string(inputs.cols) +
                                " does not match model input dim " +
                                std::to_string(params.input_dim()));
  }
  ForwardResult fwd;
  fwd.activations.push_back(inputs);
  for (const Layer& layer : params.layers) {
    Matrix z = affine_forward(fwd.activations.back(), layer.w, layer.b);
    for (double& v : z.data) v = std::tanh(v);
    fwd.activations.push_back(std::move(z));
  }
  fwd.logits = affine_forward(fwd.activations.back(), params.head_w, params.head_b);
  fwd.probs = Matrix(fwd.logits.rows, fwd.logits.cols);
  for (int i = 0; i < fwd.logits.rows; ++i) {
    const double* z = fwd.logits.row(i);
    double* p = fwd.probs.row(i);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < fwd.logits.cols; ++c) max_logit = std::max(max_logit, z[c]);
    double denom = 0.0;
    for (int c = 0; c < fwd.logits.cols; ++c) {
      p[c] = std::exp(z[c] - max_logit);
      denom += p[c];
    }
    for (int c = 0; c < fwd.logits.cols; ++c) p[c] /= denom;
  }
  return fwd;
}

ModelGrads ModelGrads::zeros_like(const ModelParams& params) {
  ModelGrads grads;
  for (const Layer& layer : params.layers) {
    Layer g;
    g.w = Matrix(layer.w.rows, layer.w.cols);
    g.b.assign(layer.b.size(), 0.0);
    grads.layers.push_back(std::move(g));
  }
  grads.head_w = Matrix(params.head_w.rows, params.head_w.cols);
  grads.head_b.assign(params.head_b.size(), 0.0);
  return grads;
}

BackwardResult backward(const ModelParams& params, const ForwardResult& fwd,
                        const MiniBatch& batch, const CenterStore& centers,
                        const LossWeights& weights) {
  BackwardResult back;
  back.breakdown = heterogeneity_loss(batch, fwd.features(), params.head_w, params.head_b,
                                      centers, weights);
  back.grads = ModelGrads::zeros_like(params);
  back.grads.head_w = back.breakdown.d_head_w;
  back.grads.head_b = back.breakdown.d_head_b;
  back.d_class_centers = back.breakdown.d_class_centers;
  back.d_subject_centers = back.breakdown.d_subject_centers;

  // Backpropagate d_features through the tanh stack: for a = tanh(z),
  // dz = da * (1 - a^2); dW = dz^T x; db = column sums; dx = dz W.
  Matrix delta = back.breakdown.d_features;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& layer = params.layers[li];
    Layer& g = back.grads.layers[li];
    const Matrix& a = fwd.activations[li + 1];
    const Matrix& x = fwd.activations[li];
    for (int i = 0; i < delta.rows; ++i) {
      const double* arow = a.row(i);
      double* drow = delta.row(i);
      for (int o = 0; o < delta.cols; ++o) drow[o] *= 1.0 - arow[o] * arow[o];
    }
    Matrix next(delta.rows, layer.w.cols);
    for (int i = 0; i < delta.rows; ++i) {
      const double* dz = delta.row(i);
      const double* xrow = x.row(i);
      double* nx = next.row(i);
      for (int o = 0; o < layer.w.rows; ++o) {
        const double d = dz[o];
        g.b[static_cast<std::size_t>(o)] += d;
        double* gw = g.w.row(o);
        const double* wo = layer.w.row(o);
        for (int j = 0; j < layer.w.cols; ++j) {
          gw[j] += d * xrow[j];
          nx[j] += d * wo[j];
        }
      }
    }
    delta = std::move(next);
  }
  return back;
}

OptimState OptimState::init(const std::vector<std::size_t>& group_sizes) {
  OptimState state;
  for (std::size_t n : group_sizes) {
    state.m.emplace_back(n, 0.0);
    state.v.emplace_back(n, 0.0);
  }
  state.step = 0;
  return state;
}

std::vector<ParamView> param_views(ModelParams& params, CenterStore& centers,
                                   const BackwardResult& back) {
  std::vector<ParamView> views;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    views.push_back({params.layers[li].w.data.data(), back.grads.layers[li].w.data.data(),
                     params.layers[li].w.data.size()});
    views.push_back({params.layers[li].b.data(), back.grads.layers[li].b.data(),
                     params.layers[li].b.size()});
  }
  views.push_back({params.head_w.data.data(), back.grads.head_w.data.data(),
                   params.head_w.data.size()});
  views.push_back({params.head_b.data(), back.grads.head_b.data(), params.head_b.size()});
  views.push_back({centers.class_centers.data.data(), back.d_class_centers.data.data(),
                   centers.class_centers.data.size()});
  views.push_back({centers.subject_centers.data.data(), back.d_subject_centers.data.data(),
                   centers.subject_centers.data.size()});
  return views;
}

std::vector<std::size_t> param_group_sizes(const ModelParams& params, const CenterStore& centers) {
  std::vector<std::size_t> sizes;
  for (const Layer& layer : params.layers) {
    sizes.push_back(layer.w.data.size());
    sizes.push_back(layer.b.size());
  }
  sizes.push_back(params.head_w.data.size());
  sizes.push_back(params.head_b.size());
  sizes.push_back(centers.class_centers.data.size());
  sizes.push_back(centers.subject_centers.data.size());
  return sizes;
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const std::vector<double>& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (std::vector<double>& g : grads) {
      for (double& v : g) v *= scale;
    }
  }
  return norm;
}

bool adam_step(const std::vector<ParamView>& views, OptimState& state, const AdamConfig& config) {
  if (views.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: view count does not match optimizer state");
  }
  for (std::size_t g = 0; g < views.size(); ++g) {
    if (views[g].size != state.m[g].size()) {
      throw std::invalid_argument("adam_step: group " + std::to_string(g) +
                                  " size does not match optimizer state");
    }
    for (std::size_t i = 0; i < views[g].size; ++i) {
      if (!std::isfinite(views[g].grads[i])) return false;
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t g = 0; g < views.size(); ++g) {
    double* m = state.m[g].data();
    double* v = state.v[g].data();
    double* p = views[g].values;
    const double* grad = views[g].grads;
    for (std::size_t i = 0; i < views[g].size; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= config.lr * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
  return true;
}

double validation_weighted_f1(const ModelParams& params, const Dataset& ds,
                              const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("validation set is empty");
  const Matrix inputs = gather_inputs(ds, indices);
  const ForwardResult fwd = forward(params, inputs);
  std::vector<int> preds(indices.size());
  std::vector<int> truths(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    preds[i] = argmax_index(fwd.probs.row(static_cast<int>(i)), fwd.probs.cols);
    truths[i] = ds.samples[static_cast<std::size_t>(indices[i])].class_id;
  }
  return weighted_f1(preds, truths, ds.n_classes).weighted_f1;
}

namespace {

// Runs one training stage in place, updating best/history. Returns an abort
// marker instead of throwing when the loss goes non-finite.
StageOutcome run_stage(int stage, const Dataset& ds, const std::vector<int>& train_indices,
                       const std::vector<int>& val_indices, const TrainConfig& config,
                       double lr, int max_epochs, ModelParams& params, CenterStore& centers,
                       Checkpoint& best, std::vector<EpochLog>& history) {
  AdamConfig adam;
  adam.lr = lr;
  OptimState state = OptimState::init(param_group_sizes(params, centers));
  const std::uint64_t batch_tag =
      stage == 1 ? seed_tag::batches_stage1 : seed_tag::batches_stage2;
  long long step = history.empty() ? 0 : history.back().step;
  int epochs_since_improve = 0;

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    const std::vector<MiniBatch> batches = minibatch_iter(
        ds, train_indices, config.batch_size, mix_seed(config.seed, batch_tag), epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const MiniBatch& batch = batches[bi];
      const Matrix inputs = gather_inputs(ds, batch.indices);
      const ForwardResult fwd = forward(params, inputs);
      BackwardResult back = backward(params, fwd, batch, centers, config.weights);
      if (!std::isfinite(back.breakdown.total)) {
        StageOutcome out;
        out.aborted = true;
        out.abort_reason = "stage " + std::to_string(stage) + " epoch " +
                           std::to_string(epoch) + ": non-finite training loss";
        return out;
      }

      // Clip on flattened copies, then step through views onto the params.
      std::vector<std::vector<double>> flat;
      for (std::size_t li = 0; li < back.grads.layers.size(); ++li) {
        flat.push_back(back.grads.layers[li].w.data);
        flat.push_back(back.grads.layers[li].b);
      }
      flat.push_back(back.grads.head_w.data);
      flat.push_back(back.grads.head_b);
      flat.push_back(back.d_class_centers.data);
      flat.push_back(back.d_subject_centers.data);
      clip_global_norm(flat, config.clip_norm);
      {
        std::size_t fi = 0;
        for (std::size_t li = 0; li < back.grads.layers.size(); ++li) {
          back.grads.layers[li].w.data = flat[fi++];
          back.grads.layers[li].b = flat[fi++];
        }
        back.grads.head_w.data = flat[fi++];
        back.grads.head_b = flat[fi++];
        back.d_class_centers.data = flat[fi++];
        back.d_subject_centers.data = flat[fi++];
      }

      const std::vector<ParamView> views = param_views(params, centers, back);
      if (!adam_step(views, state, adam)) {
        StageOutcome out;
        out.aborted = true;
        out.abort_reason = "stage " + std::to_string(stage) + " epoch " +
                           std::to_string(epoch) + ": non-finite gradient, step rejected";
        return out;
      }
      step += 1;

      EpochLog log;
      log.stage = stage;
      log.epoch = epoch;
      log.step = step;
      log.ce = back.breakdown.ce;
      log.class_center = back.breakdown.class_center;
      log.subject_center = back.breakdown.subject_center;
      log.subject_class = back.breakdown.subject_class;
      log.total = back.breakdown.total;
      log.val_wf1 = std::numeric_limits<double>::quiet_NaN();
      history.push_back(log);
    }

    const double val = validation_weighted_f1(params, ds, val_indices);
    if (!history.empty()) history.back().val_wf1 = val;
    if (val > best.val_weighted_f1) {
      best.params = params;
      best.centers = centers;
      best.val_weighted_f1 = val;
      best.stage = stage;
      best.epoch = epoch;
      epochs_since_improve = 0;
    } else {
      epochs_since_improve += 1;
      if (epochs_since_improve >= config.patience) break;
    }
  }
  return {};
}

}  // namespace

TrainResult train_two_stage(const Dataset& ds, const std::vector<int>& train_indices,
                            const std::vector<int>& val_indices, const TrainConfig& config) {
  if (train_indices.empty()) throw std::invalid_argument("training set is empty");
  if (val_indices.empty()) throw std::invalid_argument("validation set is empty");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (config.patience < 1) throw std::invalid_argument("patience must be >= 1");

  TrainResult result;
  ModelParams params = ModelParams::init(ds.dim(), config.hidden, config.feature_dim,
                                         ds.n_classes, config.seed);
  CenterStore centers = CenterStore::init(ds.n_classes, ds.n_subjects, config.feature_dim,
                                          config.seed);
  result.best.params = params;
  result.best.centers = centers;
  result.best.config = config;
  result.best.val_weighted_f1 = -1.0;  // any real score replaces the init snapshot
  result.best.stage = 0;
  result.best.epoch = -1;

  StageOutcome s1 = run_stage(1, ds, train_indices, val_indices, config, config.stage1_lr,
                              config.stage1_max_epochs, params, centers, result.best,
                              result.history);
  if (s1.aborted) {
    result.aborted = true;
    result.abort_reason = s1.abort_reason;
    if (result.best.val_weighted_f1 < 0.0) result.best.val_weighted_f1 = 0.0;
    return result;
  }

  // Stage 2 fine-tunes from the best stage-1 snapshot with fresh optimizer
  // moments, so stale stage-1 momentum cannot overshoot at the tiny lr.
  params = result.best.params;
  centers = result.best.centers;
  StageOutcome s2 = run_stage(2, ds, train_indices, val_indices, config, config.stage2_lr,
                              config.stage2_max_epochs, params, centers, result.best,
                              result.history);
  if (s2.aborted) {
    result.aborted = true;
    result.abort_reason = s2.abort_reason;
  }
  if (result.best.val_weighted_f1 < 0.0) result.best.val_weighted_f1 = 0.0;
  return result;
}

Matrix predict_proba(const ModelParams& params, const Matrix& inputs, int views, double jitter,
                     std::uint64_t seed) {
  if (views < 1) throw std::invalid_argument("predict_proba: views must be >= 1");
  if (jitter < 0.0) throw std::invalid_argument("predict_proba: jitter must be >= 0");
  if (views == 1 || jitter == 0.0) return forward(params, inputs).probs;

  Matrix avg(inputs.rows, params.n_classes());
  Rng rng(mix_seed(seed, seed_tag::tta));
  Matrix perturbed(inputs.rows, inputs.cols);
  for (int v = 0; v < views; ++v) {
    for (std::size_t i = 0; i < inputs.data.size(); ++i) {
      perturbed.data[i] = inputs.data[i] + rng.normal() * jitter;
    }
    const ForwardResult fwd = forward(params, perturbed);
    for (std::size_t i = 0; i < avg.data.size(); ++i) avg.data[i] += fwd.probs.data[i];
  }
  const double inv = 1.0 / static_cast<double>(views);
  for (double& p : avg.data) p *= inv;
  return avg;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  try {
    write_bytes(f, kCheckpointMagic, sizeof(kCheckpointMagic), path);
    write_i64(f, static_cast<long long>(ckpt.params.layers.size()), path);
    for (const Layer& layer : ckpt.params.layers) {
      write_matrix(f, layer.w, path);
      write_vec(f, layer.b, path);
    }
    write_matrix(f, ckpt.params.head_w, path);
    write_vec(f, ckpt.params.head_b, path);
    write_matrix(f, ckpt.centers.class_centers, path);
    write_matrix(f, ckpt.centers.subject_centers, path);

    const TrainConfig& c = ckpt.config;
    write_f64(f, c.stage1_lr, path);
    write_f64(f, c.stage2_lr, path);
    write_i64(f, c.batch_size, path);
    write_f64(f, c.weights.lambda1, path);
    write_f64(f, c.weights.lambda2, path);
    write_f64(f, c.weights.lambda3, path);
    write_i64(f, c.stage1_max_epochs, path);
    write_i64(f, c.stage2_max_epochs, path);
    write_i64(f, c.patience, path);
    write_i64(f, static_cast<long long>(c.hidden.size()), path);
    for (int h : c.hidden) write_i64(f, h, path);
    write_i64(f, c.feature_dim, path);
    write_f64(f, c.clip_norm, path);
    write_i64(f, static_cast<long long>(c.seed), path);

    write_f64(f, ckpt.val_weighted_f1, path);
    write_i64(f, ckpt.stage, path);
    write_i64(f, ckpt.epoch, path);
  } catch (...) {
    std::fclose(f);
    throw;
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open checkpoint file " + path);
  Checkpoint ckpt;
  try {
    char magic[8];
    read_bytes(f, magic, sizeof(magic), path);
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
      throw std::runtime_error(path + " is not a checkpoint file");
    }
    const long long n_layers = read_i64(f, path);
    if (n_layers < 0 || n_layers > 64) throw std::runtime_error("corrupt layer count in " + path);
    for (long long i = 0; i < n_layers; ++i) {
      Layer layer;
      layer.w = read_matrix(f, path);
      layer.b = read_vec(f, path);
      ckpt.params.layers.push_back(std::move(layer));
    }
    ckpt.params.head_w = read_matrix(f, path);
    ckpt.params.head_b = read_vec(f, path);
    ckpt.centers.class_centers = read_matrix(f, path);
    ckpt.centers.subject_centers = read_matrix(f, path);

    TrainConfig& c = ckpt.config;
    c.stage1_lr = read_f64(f, path);
    c.stage2_lr = read_f64(f, path);
    c.batch_size = static_cast<int>(read_i64(f, path));
    c.weights.lambda1 = read_f64(f, path);
    c.weights.lambda2 = read_f64(f, path);
    c.weights.lambda3 = read_f64(f, path);
    c.stage1_max_epochs = static_cast<int>(read_i64(f, path));
    c.stage2_max_epochs = static_cast<int>(read_i64(f, path));
    c.patience = static_cast<int>(read_i64(f, path));
    const long long n_hidden = read_i64(f, path);
    if (n_hidden < 0 || n_hidden > 64) throw std::runtime_error("corrupt hidden count in " + path);
    c.hidden.clear();
    for (long long i = 0; i < n_hidden; ++i) c.hidden.push_back(static_cast<int>(read_i64(f, path)));
    c.feature_dim = static_cast<int>(read_i64(f, path));
    c.clip_norm = read_f64(f, path);
    c.seed = static_cast<std::uint64_t>(read_i64(f, path));

    ckpt.val_weighted_f1 = read_f64(f, path);
    ckpt.stage = static_cast<int>(read_i64(f, path));
    ckpt.epoch = static_cast<int>(read_i64(f, path));

    // The file must end exactly here.
    char extra;
    if (std::fread(&extra, 1, 1, f) == 1) {
      throw std::runtime_error("trailing bytes in checkpoint file " + path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return ckpt;
}

}  // namespace hetero
