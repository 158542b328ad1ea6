#include "hetero/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "hetero/rng.hpp"

namespace hetero {
namespace {

void check_config(const GenConfig& c) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("gen config: " + msg); };
  if (c.n_classes < 2) fail("n_classes must be >= 2");
  if (c.dim < c.n_classes) {
    fail("dim (" + std::to_string(c.dim) + ") must be >= n_classes (" +
         std::to_string(c.n_classes) + ") to place equidistant class means");
  }
  if (static_cast<int>(c.subjects_per_class.size()) != c.n_classes) {
    fail("subjects_per_class must list one entry per class");
  }
  for (int n : c.subjects_per_class) {
    if (n < 1) fail("each class needs at least one subject");
  }
  if (!(c.class_separation >= 0.0)) fail("class_separation must be >= 0");
  if (!(c.subject_bias_scale >= 0.0)) fail("subject_bias_scale must be >= 0");
  if (!(c.noise_scale >= 0.0)) fail("noise_scale must be >= 0");
  if (!(c.power_law_exponent > 0.0)) fail("power_law_exponent must be > 0");
  if (c.min_images < 1) fail("min_images must be >= 1");
  if (c.max_images < c.min_images) fail("max_images must be >= min_images");
  if (!(c.class_imbalance_ratio >= 1.0)) fail("class_imbalance_ratio must be >= 1");
}

// Continuous truncated power-law draw on [lo, hi] with density
// proportional to x^(-a), via inverse CDF from a single uniform.
double truncated_power_law(double u, double lo, double hi, double a) {
  if (std::abs(a - 1.0) < 1e-12) {
    return lo * std::exp(u * std::log(hi / lo));
  }
  const double one_minus = 1.0 - a;
  const double lo_pow = std::pow(lo, one_minus);
  const double hi_pow = std::pow(hi, one_minus);
  return std::pow(u * (hi_pow - lo_pow) + lo_pow, 1.0 / one_minus);
}

long long scaled_count(double raw, double scale, int lo, int hi) {
  const long long n = std::llround(raw * scale);
  if (n < lo) return lo;
  if (n > hi) return hi;
  return n;
}

long long class_total(const std::vector<double>& raws, double scale, int lo, int hi) {
  long long total = 0;
  for (double raw : raws) total += scaled_count(raw, scale, lo, hi);
  return total;
}

// Smallest scale (up to bisection resolution) whose clamped rounded counts
// sum to at least `target`. The sum is a nondecreasing step function of the
// scale, so bisection lands on the step containing the target.
double solve_scale(const std::vector<double>& raws, long long target, int lo, int hi) {
  double a_lo = 1e-6;
  double a_hi = 1e6;
  if (class_total(raws, a_lo, lo, hi) >= target) return a_lo;
  if (class_total(raws, a_hi, lo, hi) < target) return a_hi;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (a_lo + a_hi);
    if (class_total(raws, mid, lo, hi) < target) {
      a_lo = mid;
    } else {
      a_hi = mid;
    }
  }
  return a_hi;
}

}  // namespace

GenConfig GenConfig::benchmark_default(std::uint64_t seed) {
  GenConfig c;
  c.seed = seed;
  return c;
}

GenConfig GenConfig::cohort101(std::uint64_t seed) {
  GenConfig c;
  c.dim = 16;
  c.n_classes = 2;
  c.subjects_per_class = {60, 41};
  c.class_separation = 2.0;
  c.subject_bias_scale = 1.5;
  c.noise_scale = 1.0;
  c.power_law_exponent = 1.5;
  c.min_images = 20;
  c.max_images = 400;
  c.class_imbalance_ratio = 2.1;
  c.seed = seed;
  return c;
}

Generated generate(const GenConfig& config) {
  check_config(config);
  const int n_classes = config.n_classes;
  int n_subjects = 0;
  for (int n : config.subjects_per_class) n_subjects += n;

  Generated out;
  GroundTruth& truth = out.truth;
  truth.seed = config.seed;
  truth.class_means = Matrix(n_classes, config.dim);
  // Axis-aligned simplex corners: mean_c = (sep / sqrt(2)) * e_c makes every
  // pair of class means exactly class_separation apart.
  const double coord = config.class_separation / std::sqrt(2.0);
  for (int c = 0; c < n_classes; ++c) truth.class_means.at(c, c) = coord;

  truth.subject_class.reserve(static_cast<std::size_t>(n_subjects));
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < config.subjects_per_class[static_cast<std::size_t>(c)]; ++i) {
      truth.subject_class.push_back(c);
    }
  }

  Rng rng(mix_seed(config.seed, seed_tag::gen));

  // Pass 1: per-subject latent state — offset (dim normals) then one uniform
  // for the raw image-count draw.
  truth.subject_offsets = Matrix(n_subjects, config.dim);
  std::vector<double> raw_counts(static_cast<std::size_t>(n_subjects));
  for (int s = 0; s < n_subjects; ++s) {
    double* offset = truth.subject_offsets.row(s);
    for (int j = 0; j < config.dim; ++j) offset[j] = rng.normal() * config.subject_bias_scale;
    raw_counts[static_cast<std::size_t>(s)] =
        truncated_power_law(rng.uniform01(), config.min_images, config.max_images,
                            config.power_law_exponent);
  }

  // Class 0 is the majority class: it gets `ratio` images for every one
  // image in each other class. Per-class raw draws are rescaled to hit the
  // implied share of the pooled raw total.
  double total_raw = 0.0;
  for (double r : raw_counts) total_raw += r;
  const double share_denom = config.class_imbalance_ratio + static_cast<double>(n_classes - 1);
  std::vector<std::vector<double>> raw_by_class(static_cast<std::size_t>(n_classes));
  for (int s = 0; s < n_subjects; ++s) {
    raw_by_class[static_cast<std::size_t>(truth.subject_class[static_cast<std::size_t>(s)])]
        .push_back(raw_counts[static_cast<std::size_t>(s)]);
  }

  std::vector<double> scales(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    const double share =
        (c == 0 ? config.class_imbalance_ratio : 1.0) / share_denom;
    const long long target = std::llround(total_raw * share);
    const long long n_subj =
        static_cast<long long>(config.subjects_per_class[static_cast<std::size_t>(c)]);
    const long long floor_total = n_subj * config.min_images;
    const long long ceil_total = n_subj * config.max_images;
    if (target < floor_total || target > ceil_total) {
      throw std::invalid_argument(
          "gen config: class " + std::to_string(c) + " needs " + std::to_string(target) +
          " images but min_images/max_images bound the total to [" +
          std::to_string(floor_total) + ", " + std::to_string(ceil_total) +
          "]; adjust class_imbalance_ratio, subjects_per_class, or the image bounds");
    }
    scales[static_cast<std::size_t>(c)] =
        solve_scale(raw_by_class[static_cast<std::size_t>(c)], target, config.min_images,
                    config.max_images);
  }

  truth.images_per_subject.resize(static_cast<std::size_t>(n_subjects));
  std::vector<long long> class_totals(static_cast<std::size_t>(n_classes), 0);
  for (int s = 0; s < n_subjects; ++s) {
    const int c = truth.subject_class[static_cast<std::size_t>(s)];
    const long long n = scaled_count(raw_counts[static_cast<std::size_t>(s)],
                                     scales[static_cast<std::size_t>(c)], config.min_images,
                                     config.max_images);
    truth.images_per_subject[static_cast<std::size_t>(s)] = n;
    class_totals[static_cast<std::size_t>(c)] += n;
  }
  for (int c = 1; c < n_classes; ++c) {
    const double achieved = static_cast<double>(class_totals[0]) /
                            static_cast<double>(class_totals[static_cast<std::size_t>(c)]);
    if (std::abs(achieved / config.class_imbalance_ratio - 1.0) > 0.10) {
      throw std::runtime_error("generated class totals miss class_imbalance_ratio by more "
                               "than 10% for class " + std::to_string(c) + " (achieved " +
                               std::to_string(achieved) + ")");
    }
  }

  // Pass 2: emit samples subject-major; each sample draws dim noise normals.
  Dataset& ds = out.dataset;
  ds.n_classes = n_classes;
  ds.n_subjects = n_subjects;
  ds.subject_class = truth.subject_class;
  for (int s = 0; s < n_subjects; ++s) {
    const int c = truth.subject_class[static_cast<std::size_t>(s)];
    const double* mean = truth.class_means.row(c);
    const double* offset = truth.subject_offsets.row(s);
    for (long long i = 0; i < truth.images_per_subject[static_cast<std::size_t>(s)]; ++i) {
      Sample sample;
      sample.subject = s;
      sample.class_id = c;
      sample.features.resize(static_cast<std::size_t>(config.dim));
      for (int j = 0; j < config.dim; ++j) {
        sample.features[static_cast<std::size_t>(j)] =
            mean[j] + offset[j] + rng.normal() * config.noise_scale;
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  return out;
}

void save_ground_truth(const GroundTruth& truth, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  auto line = [&](const char* fmt, auto... args) {
    if (std::fprintf(f, fmt, args...) < 0) {
      std::fclose(f);
      throw std::runtime_error("write failure on " + path);
    }
  };
  line("%s", "hetero-truth v1\n");
  line("seed %llu\n", static_cast<unsigned long long>(truth.seed));
  line("n_classes %d dim %d n_subjects %d\n", truth.class_means.rows, truth.class_means.cols,
       truth.subject_offsets.rows);
  for (int c = 0; c < truth.class_means.rows; ++c) {
    line("class_mean %d", c);
    for (int j = 0; j < truth.class_means.cols; ++j) {
      line(" %.17g", truth.class_means.at(c, j));
    }
    line("%s", "\n");
  }
  for (int s = 0; s < truth.subject_offsets.rows; ++s) {
    line("subject %d class %d images %lld offset", s,
         truth.subject_class[static_cast<std::size_t>(s)],
         static_cast<long long>(truth.images_per_subject[static_cast<std::size_t>(s)]));
    for (int j = 0; j < truth.subject_offsets.cols; ++j) {
      line(" %.17g", truth.subject_offsets.at(s, j));
    }
    line("%s", "\n");
  }
  if (std::fclose(f) != 0) throw std::runtime_error("failed to flush " + path);
}

}  // namespace hetero
