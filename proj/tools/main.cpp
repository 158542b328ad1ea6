// Command-line pipeline: generate data, plan subject folds, train per-fold
// models, predict confidences, combine them, and evaluate. Each stage reads
// and writes plain files so stages can be rerun and checked independently.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hetero/core.hpp"
#include "hetero/ensemble.hpp"
#include "hetero/loss.hpp"
#include "hetero/metrics.hpp"
#include "hetero/model.hpp"
#include "hetero/rng.hpp"
#include "hetero/sampler.hpp"
#include "hetero/selfcheck.hpp"
#include "hetero/synthdata.hpp"

namespace {

using namespace hetero;

std::string theta_token(double theta) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", theta);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

std::vector<int> read_index_file(const std::string& path, int n_samples) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open index file " + path);
  std::vector<int> indices;
  long long v = 0;
  while (std::fscanf(f, "%lld", &v) == 1) {
    if (v < 0 || v >= n_samples) {
      std::fclose(f);
      throw std::invalid_argument("index file entry " + std::to_string(v) +
                                  " outside dataset range [0, " + std::to_string(n_samples) +
                                  ")");
    }
    indices.push_back(static_cast<int>(v));
  }
  std::fclose(f);
  if (indices.empty()) throw std::invalid_argument("index file " + path + " has no entries");
  return indices;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string preset = "benchmark";
  std::uint64_t seed = 1;
  std::string out_dir;
};

int cmd_gen(const GenArgs& args) {
  GenConfig config;
  if (args.preset == "benchmark") {
    config = GenConfig::benchmark_default(args.seed);
  } else if (args.preset == "cohort101") {
    config = GenConfig::cohort101(args.seed);
  } else {
    throw std::invalid_argument("unknown preset '" + args.preset +
                                "' (expected benchmark or cohort101)");
  }
  ensure_dir(args.out_dir);
  const Generated gen = generate(config);
  const std::vector<std::string> violations = validate_dataset(gen.dataset);
  if (!violations.empty()) {
    throw std::runtime_error("generated dataset failed validation: " + violations.front());
  }
  save_dataset(gen.dataset, args.out_dir + "/dataset.txt");
  save_ground_truth(gen.truth, args.out_dir + "/truth.txt");
  std::printf("generated %zu samples, %d subjects, %d classes (seed %" PRIu64 ")\n",
              gen.dataset.samples.size(), gen.dataset.n_subjects, gen.dataset.n_classes,
              args.seed);
  std::printf("wrote %s/dataset.txt and %s/truth.txt\n", args.out_dir.c_str(),
              args.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  std::string data;
  int k = 7;
  std::uint64_t seed = 1;
  double tolerance = 1.2;
  std::string out;
};

int cmd_split(const SplitArgs& args) {
  const Dataset ds = load_dataset(args.data);
  const FoldPlan plan = stratified_subject_folds(ds, args.k, args.seed, args.tolerance);
  save_fold_plan(plan, args.out);
  std::printf("planned %d subject-disjoint folds over %d subjects\n", plan.k, ds.n_subjects);
  std::printf("per-class image-count max/min ratio %.6f (tolerance %.3f: %s)\n",
              plan.achieved_ratio, plan.tolerance_ratio, plan.tolerance_met ? "met" : "NOT met");
  std::printf("wrote %s\n", args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string folds;
  std::string fold = "all";
  std::uint64_t seed = 1;
  std::string out_dir;
  TrainConfig config;
};

void write_train_log(const std::vector<EpochLog>& history, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::fprintf(f, "step,ce,class,subject,subject_class,total\n");
  for (const EpochLog& log : history) {
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", log.step, log.ce, log.class_center,
                 log.subject_center, log.subject_class, log.total);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

void write_val_history(const std::vector<EpochLog>& history, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::fprintf(f, "stage,epoch,step,val_weighted_f1\n");
  for (const EpochLog& log : history) {
    if (log.val_wf1 == log.val_wf1) {  // NaN marks mid-epoch steps
      std::fprintf(f, "%d,%d,%lld,%.17g\n", log.stage, log.epoch, log.step, log.val_wf1);
    }
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

int cmd_train(const TrainArgs& args) {
  const Dataset ds = load_dataset(args.data);
  const FoldPlan plan = load_fold_plan(args.folds);
  ensure_dir(args.out_dir);

  std::vector<int> folds_to_train;
  if (args.fold == "all") {
    for (int fold = 0; fold < plan.k; ++fold) folds_to_train.push_back(fold);
  } else {
    std::size_t consumed = 0;
    int fold = -1;
    try {
      fold = std::stoi(args.fold, &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed != args.fold.size() || fold < 0 || fold >= plan.k) {
      throw std::invalid_argument("--fold must be 'all' or an integer in [0, " +
                                  std::to_string(plan.k) + "), got '" + args.fold + "'");
    }
    folds_to_train.push_back(fold);
  }

  bool any_aborted = false;
  for (int fold : folds_to_train) {
    const auto [train_idx, val_idx] = fold_train_val(ds, plan, fold);
    TrainConfig config = args.config;
    config.seed = mix_seed(args.seed, static_cast<std::uint64_t>(fold));
    const TrainResult result = train_two_stage(ds, train_idx, val_idx, config);

    const std::string tag = "_fold" + std::to_string(fold);
    save_checkpoint(result.best, args.out_dir + "/model" + tag + ".ckpt");
    write_train_log(result.history, args.out_dir + "/train_log" + tag + ".csv");
    write_val_history(result.history, args.out_dir + "/val_history" + tag + ".csv");
    std::printf("fold %d: best val weighted-F1 %.6f (stage %d, epoch %d)%s\n", fold,
                result.best.val_weighted_f1, result.best.stage, result.best.epoch,
                result.aborted ? " [aborted]" : "");
    if (result.aborted) {
      std::fprintf(stderr, "fold %d aborted: %s\n", fold, result.abort_reason.c_str());
      any_aborted = true;
    }
  }
  if (any_aborted) throw std::runtime_error("at least one fold aborted on non-finite loss");
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string data;
  std::vector<std::string> models;
  int views = 1;
  double jitter = 0.0;
  std::uint64_t seed = 1;
  std::string indices;
  std::string out;
};

int cmd_predict(const PredictArgs& args) {
  const Dataset ds = load_dataset(args.data);
  std::vector<int> indices;
  if (args.indices.empty()) {
    indices.resize(ds.samples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  } else {
    indices = read_index_file(args.indices, static_cast<int>(ds.samples.size()));
  }
  const Matrix inputs = gather_inputs(ds, indices);

  ConfidenceTable table;
  table.sample_ids.reserve(indices.size());
  for (int idx : indices) table.sample_ids.push_back(idx);
  table.samples.assign(indices.size(), {});

  for (std::size_t k = 0; k < args.models.size(); ++k) {
    const Checkpoint ckpt = load_checkpoint(args.models[k]);
    if (ckpt.params.input_dim() != ds.dim() || ckpt.params.n_classes() != ds.n_classes) {
      throw std::invalid_argument("model " + args.models[k] +
                                  " does not match the dataset's dim/class shape");
    }
    const Matrix probs = predict_proba(ckpt.params, inputs, args.views, args.jitter,
                                       mix_seed(args.seed, static_cast<std::uint64_t>(k)));
    for (int i = 0; i < probs.rows; ++i) {
      std::vector<double> row(probs.row(i), probs.row(i) + probs.cols);
      table.samples[static_cast<std::size_t>(i)].push_back(std::move(row));
    }
  }
  save_confidences(table, args.out);
  std::printf("wrote confidences for %zu samples x %zu models to %s\n", indices.size(),
              args.models.size(), args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct EnsembleArgs {
  std::string confidences;
  std::vector<double> thetas = {0.95};
  double epsilon_clamp = 1e-6;
  int expected_models = 0;
  std::string out_dir;
};

int cmd_ensemble(const EnsembleArgs& args) {
  const ConfidenceTable table = load_confidences(args.confidences);
  ensure_dir(args.out_dir);
  for (double theta : args.thetas) {
    EnsembleConfig config;
    config.theta = theta;
    config.epsilon_clamp = args.epsilon_clamp;
    config.expected_models = args.expected_models;
    const BatchDecisions batch = batch_decide(table.samples, config);
    DecisionTable decisions{table.sample_ids, batch.decisions};
    const std::string path = args.out_dir + "/decisions_theta" + theta_token(theta) + ".csv";
    save_decisions(decisions, path);
    std::printf("theta %s: %.2f%% max-vote, %.2f%% harmonic -> %s\n", theta_token(theta).c_str(),
                100.0 * batch.max_vote_fraction, 100.0 * batch.harmonic_fraction, path.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string decisions;
  std::vector<double> thetas = {0.95, 0.98};
  std::string confidences;
  std::string out;
};

int cmd_eval(const EvalArgs& args) {
  const Dataset ds = load_dataset(args.data);
  const DecisionTable decisions = load_decisions(args.decisions);

  auto truth_of = [&](long long sample_id) {
    if (sample_id < 0 || sample_id >= static_cast<long long>(ds.samples.size())) {
      throw std::invalid_argument("decision sample id " + std::to_string(sample_id) +
                                  " is not a dataset index");
    }
    return ds.samples[static_cast<std::size_t>(sample_id)].class_id;
  };

  std::vector<int> preds;
  std::vector<double> confs;
  std::vector<int> truths;
  for (std::size_t i = 0; i < decisions.decisions.size(); ++i) {
    preds.push_back(decisions.decisions[i].class_id);
    confs.push_back(decisions.decisions[i].confidence);
    truths.push_back(truth_of(decisions.sample_ids[i]));
  }

  std::vector<std::pair<std::string, EvalResult>> rows;
  rows.emplace_back("full", weighted_f1(preds, truths, ds.n_classes));
  for (double theta : args.thetas) {
    rows.emplace_back("subset_theta" + theta_token(theta),
                      high_confidence_subset_eval(preds, confs, truths, theta, ds.n_classes));
  }

  if (!args.confidences.empty()) {
    const ConfidenceTable table = load_confidences(args.confidences);
    std::vector<int> model_truths;
    for (long long id : table.sample_ids) model_truths.push_back(truth_of(id));
    const std::size_t n_models = table.samples.front().size();
    for (std::size_t k = 0; k < n_models; ++k) {
      std::vector<int> model_preds;
      std::vector<double> model_confs;
      for (const ModelConfidences& models : table.samples) {
        if (models.size() != n_models) {
          throw std::invalid_argument("confidence rows disagree on model count");
        }
        const int arg = argmax_index(models[k]);
        model_preds.push_back(arg);
        model_confs.push_back(models[k][static_cast<std::size_t>(arg)]);
      }
      rows.emplace_back("model" + std::to_string(k),
                        weighted_f1(model_preds, model_truths, ds.n_classes));
      for (double theta : args.thetas) {
        rows.emplace_back("model" + std::to_string(k) + "_theta" + theta_token(theta),
                          high_confidence_subset_eval(model_preds, model_confs, model_truths,
                                                      theta, ds.n_classes));
      }
    }
  }

  std::fputs(format_metrics_table(rows).c_str(), stdout);
  if (!args.out.empty()) {
    save_metrics_csv(rows, args.out);
    std::printf("wrote %s\n", args.out.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::uint64_t seed = 1;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& args) {
  SelfCheckOptions options;
  options.seed = args.seed;
  options.inject_gradient_fault = args.inject_fault;
  const SelfCheckReport report = run_selfchecks(options);
  for (const CheckLine& line : report.lines) {
    std::printf("%s %s (%s)\n", line.pass ? "PASS" : "FAIL", line.name.c_str(),
                line.detail.c_str());
  }
  if (!report.pass) {
    std::fprintf(stderr, "verification failed\n");
    return 2;
  }
  std::printf("all checks passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subject-heterogeneity classification pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI file (sections per subcommand)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic subject-heterogeneous dataset");
  gen->add_option("--preset", gen_args.preset, "Dataset preset: benchmark or cohort101")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "Root seed")->capture_default_str();
  gen->add_option("--out-dir", gen_args.out_dir, "Output directory")->required();

  SplitArgs split_args;
  CLI::App* split = app.add_subcommand("split", "Plan stratified subject-disjoint folds");
  split->add_option("--data", split_args.data, "Dataset file")->required();
  split->add_option("--k", split_args.k, "Number of folds")->capture_default_str();
  split->add_option("--seed", split_args.seed, "Root seed")->capture_default_str();
  split->add_option("--tolerance", split_args.tolerance,
                    "Acceptable per-class fold image-count max/min ratio")
      ->capture_default_str();
  split->add_option("--out", split_args.out, "Fold manifest output path")->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train one model per fold (two-stage schedule)");
  train->add_option("--data", train_args.data, "Dataset file")->required();
  train->add_option("--folds", train_args.folds, "Fold manifest path")->required();
  train->add_option("--fold", train_args.fold, "Fold index or 'all'")->capture_default_str();
  train->add_option("--seed", train_args.seed, "Root seed")->capture_default_str();
  train->add_option("--out-dir", train_args.out_dir, "Output directory")->required();
  train->add_option("--stage1-lr", train_args.config.stage1_lr, "Stage-1 learning rate")
      ->capture_default_str();
  train->add_option("--stage2-lr", train_args.config.stage2_lr, "Stage-2 learning rate")
      ->capture_default_str();
  train->add_option("--batch-size", train_args.config.batch_size, "Minibatch size")
      ->capture_default_str();
  train->add_option("--stage1-epochs", train_args.config.stage1_max_epochs,
                    "Stage-1 epoch budget")
      ->capture_default_str();
  train->add_option("--stage2-epochs", train_args.config.stage2_max_epochs,
                    "Stage-2 epoch budget")
      ->capture_default_str();
  train->add_option("--patience", train_args.config.patience,
                    "Epochs without validation improvement before stopping a stage")
      ->capture_default_str();
  train->add_option("--hidden", train_args.config.hidden, "Hidden layer widths")
      ->capture_default_str();
  train->add_option("--feature-dim", train_args.config.feature_dim, "Deep-feature width")
      ->capture_default_str();
  train->add_option("--clip-norm", train_args.config.clip_norm, "Global gradient-norm clip")
      ->capture_default_str();
  train->add_option("--lambda1", train_args.config.weights.lambda1, "Class-center loss weight")
      ->capture_default_str();
  train->add_option("--lambda2", train_args.config.weights.lambda2, "Subject-center loss weight")
      ->capture_default_str();
  train->add_option("--lambda3", train_args.config.weights.lambda3,
                    "Subject-class pairwise loss weight")
      ->capture_default_str();

  PredictArgs predict_args;
  CLI::App* predict = app.add_subcommand("predict", "Write per-model class confidences");
  predict->add_option("--data", predict_args.data, "Dataset file")->required();
  predict->add_option("--model", predict_args.models, "Checkpoint path (repeatable)")
      ->required();
  predict->add_option("--views", predict_args.views, "Augmented views to average at inference")
      ->capture_default_str();
  predict->add_option("--jitter", predict_args.jitter, "Gaussian input jitter per view")
      ->capture_default_str();
  predict->add_option("--seed", predict_args.seed, "Root seed (view jitter)")
      ->capture_default_str();
  predict->add_option("--indices", predict_args.indices,
                      "Optional file of dataset indices to predict (default: all)");
  predict->add_option("--out", predict_args.out, "Confidences CSV output path")->required();

  EnsembleArgs ensemble_args;
  CLI::App* ensemble = app.add_subcommand("ensemble", "Combine model confidences into decisions");
  ensemble->add_option("--confidences", ensemble_args.confidences, "Confidences CSV")->required();
  ensemble->add_option("--theta", ensemble_args.thetas,
                       "Confidence threshold(s); one decisions file per value")
      ->capture_default_str();
  ensemble->add_option("--epsilon-clamp", ensemble_args.epsilon_clamp,
                       "Probability floor inside the harmonic mean")
      ->capture_default_str();
  ensemble->add_option("--expected-models", ensemble_args.expected_models,
                       "Require exactly this many models per sample (0 = any)")
      ->capture_default_str();
  ensemble->add_option("--out-dir", ensemble_args.out_dir, "Output directory")->required();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "Score decisions against dataset labels");
  eval->add_option("--data", eval_args.data, "Dataset file (ground truth)")->required();
  eval->add_option("--decisions", eval_args.decisions, "Decisions CSV")->required();
  eval->add_option("--theta", eval_args.thetas,
                   "Threshold(s) for high-confidence subset rows")
      ->capture_default_str();
  eval->add_option("--confidences", eval_args.confidences,
                   "Optional confidences CSV for per-model subset rows");
  eval->add_option("--out", eval_args.out, "Metrics CSV output path (optional)");

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand("verify", "Run the numerical self-check suite");
  verify->add_option("--seed", verify_args.seed, "Root seed")->capture_default_str();
  verify->add_flag("--inject-fault", verify_args.inject_fault,
                   "Corrupt one analytic gradient to prove the checks can fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage/config error
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args);
    if (split->parsed()) return cmd_split(split_args);
    if (train->parsed()) return cmd_train(train_args);
    if (predict->parsed()) return cmd_predict(predict_args);
    if (ensemble->parsed()) return cmd_ensemble(ensemble_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (verify->parsed()) return cmd_verify(verify_args);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
