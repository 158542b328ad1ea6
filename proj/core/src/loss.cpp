#include "hetero/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hetero/rng.hpp"

namespace hetero {
namespace {

// Maps dataset indices to batch rows so the grouped index lists in
// MiniBatch can address rows of the batch feature matrix.
std::vector<int> batch_row_lookup(const MiniBatch& batch, int domain_size) {
  std::vector<int> lookup(static_cast<std::size_t>(domain_size), -1);
  for (std::size_t row = 0; row < batch.indices.size(); ++row) {
    const int ds_index = batch.indices[row];
    if (ds_index < 0 || ds_index >= domain_size) {
      throw std::out_of_range("batch index " + std::to_string(ds_index) +
                              " outside dataset-index domain");
    }
    lookup[static_cast<std::size_t>(ds_index)] = static_cast<int>(row);
  }
  return lookup;
}

int lookup_domain(const MiniBatch& batch) {
  int max_index = -1;
  for (int ds_index : batch.indices) max_index = std::max(max_index, ds_index);
  return max_index + 1;
}

// Shared body of the two per-group center terms: groups[g] lists dataset
// indices belonging to center g.
CenterTermResult grouped_center_loss(const MiniBatch& batch, const Matrix& features,
                                     const Matrix& centers,
                                     const std::vector<std::vector<int>>& groups) {
  CenterTermResult result;
  result.d_features = Matrix(features.rows, features.cols);
  result.d_centers = Matrix(centers.rows, centers.cols);
  if (features.cols != centers.cols) {
    throw std::invalid_argument("feature dim " + std::to_string(features.cols) +
                                " does not match center dim " + std::to_string(centers.cols));
  }
  const int d = features.cols;
  const std::vector<int> lookup = batch_row_lookup(batch, lookup_domain(batch));

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::vector<int>& members = groups[g];
    if (members.empty()) continue;
    const double inv = 1.0 / static_cast<double>(members.size());
    const double* center = centers.row(static_cast<int>(g));
    double* d_center = result.d_centers.row(static_cast<int>(g));
    double sum = 0.0;
    for (int ds_index : members) {
      const int row = lookup[static_cast<std::size_t>(ds_index)];
      if (row < 0) {
        throw std::invalid_argument("group refers to dataset index " +
                                    std::to_string(ds_index) + " that is not in the batch");
      }
      const double* x = features.row(row);
      double* dx = result.d_features.row(row);
      for (int j = 0; j < d; ++j) {
        const double diff = x[j] - center[j];
        sum += diff * diff;
        dx[j] += 2.0 * inv * diff;
        d_center[j] -= 2.0 * inv * diff;
      }
    }
    result.value += sum * inv;
  }
  return result;
}

}  // namespace

CenterStore CenterStore::init(int n_classes, int n_subjects, int dim, std::uint64_t seed) {
  if (n_classes < 1 || n_subjects < 1 || dim < 1) {
    throw std::invalid_argument("center store needs positive class count, subject count, and dim");
  }
  CenterStore store;
  store.class_centers = Matrix(n_classes, dim);
  store.subject_centers = Matrix(n_subjects, dim);
  Rng rng(mix_seed(seed, seed_tag::center_init));
  for (double& v : store.class_centers.data) v = rng.normal() * 0.01;
  for (double& v : store.subject_centers.data) v = rng.normal() * 0.01;
  return store;
}

CrossEntropyResult cross_entropy(const Matrix& features, const std::vector<int>& labels,
                                 const Matrix& w, const std::vector<double>& b) {
  const int m = features.rows;
  const int d = features.cols;
  const int n_classes = w.rows;
  if (m == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (static_cast<int>(labels.size()) != m) {
    throw std::invalid_argument("cross_entropy: labels size does not match batch size");
  }
  if (w.cols != d) throw std::invalid_argument("cross_entropy: head width does not match features");
  if (static_cast<int>(b.size()) != n_classes) {
    throw std::invalid_argument("cross_entropy: bias size does not match class count");
  }

  CrossEntropyResult result;
  result.d_features = Matrix(m, d);
  result.d_w = Matrix(n_classes, d);
  result.d_b.assign(static_cast<std::size_t>(n_classes), 0.0);

  std::vector<double> logits(static_cast<std::size_t>(n_classes));
  std::vector<double> probs(static_cast<std::size_t>(n_classes));
  const double inv_m = 1.0 / static_cast<double>(m);
  double loss_sum = 0.0;

  for (int i = 0; i < m; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= n_classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(n_classes) + ")");
    }
    const double* x = features.row(i);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_classes; ++c) {
      double z = b[static_cast<std::size_t>(c)];
      const double* wc = w.row(c);
      for (int j = 0; j < d; ++j) z += wc[j] * x[j];
      logits[static_cast<std::size_t>(c)] = z;
      max_logit = std::max(max_logit, z);
    }
    double denom = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      probs[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - max_logit);
      denom += probs[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < n_classes; ++c) probs[static_cast<std::size_t>(c)] /= denom;
    // -log p_label = log(sum exp(z - max)) - (z_label - max), kept in the
    // shifted frame so saturated logits stay accurate.
    loss_sum += std::log(denom) - (logits[static_cast<std::size_t>(label)] - max_logit);

    double* dx = result.d_features.row(i);
    for (int c = 0; c < n_classes; ++c) {
      const double dz = (probs[static_cast<std::size_t>(c)] -
                         (c == label ? 1.0 : 0.0)) * inv_m;
      result.d_b[static_cast<std::size_t>(c)] += dz;
      double* dwc = result.d_w.row(c);
      const double* wc = w.row(c);
      for (int j = 0; j < d; ++j) {
        dwc[j] += dz * x[j];
        dx[j] += dz * wc[j];
      }
    }
  }
  result.value = loss_sum * inv_m;
  return result;
}

CenterTermResult class_center_loss(const MiniBatch& batch, const Matrix& features,
                                   const CenterStore& centers) {
  return grouped_center_loss(batch, features, centers.class_centers, batch.by_class);
}

CenterTermResult subject_center_loss(const MiniBatch& batch, const Matrix& features,
                                     const CenterStore& centers) {
  return grouped_center_loss(batch, features, centers.subject_centers, batch.by_subject);
}

SubjectClassResult subject_class_center_loss(const std::vector<int>& present_subjects,
                                             const CenterStore& centers,
                                             const std::vector<int>& subject_class) {
  SubjectClassResult result;
  result.d_subject_centers = Matrix(centers.subject_centers.rows, centers.subject_centers.cols);
  const int d = centers.subject_centers.cols;

  for (int s : present_subjects) {
    if (s < 0 || s >= centers.subject_centers.rows ||
        s >= static_cast<int>(subject_class.size())) {
      throw std::out_of_range("subject id " + std::to_string(s) +
                              " has no subject center or class assignment");
    }
  }

  // Ordered-pair sum: iterate unordered pairs once and double value and
  // gradient contributions.
  const std::size_t n = present_subjects.size();
  for (std::size_t a = 0; a < n; ++a) {
    const int si = present_subjects[a];
    const double* ci = centers.subject_centers.row(si);
    double* dci = result.d_subject_centers.row(si);
    for (std::size_t bidx = a + 1; bidx < n; ++bidx) {
      const int sj = present_subjects[bidx];
      if (sj == si) {
        throw std::invalid_argument("subject " + std::to_string(si) +
                                    " listed twice among present subjects");
      }
      const double* cj = centers.subject_centers.row(sj);
      double* dcj = result.d_subject_centers.row(sj);
      double dist2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = ci[j] - cj[j];
        dist2 += diff * diff;
      }
      if (subject_class[static_cast<std::size_t>(si)] ==
          subject_class[static_cast<std::size_t>(sj)]) {
        result.value += 2.0 * dist2;
        for (int j = 0; j < d; ++j) {
          const double diff = ci[j] - cj[j];
          dci[j] += 4.0 * diff;
          dcj[j] -= 4.0 * diff;
        }
      } else {
        const double denom = 1.0 + dist2;
        result.value += 2.0 / denom;
        const double scale = 4.0 / (denom * denom);
        for (int j = 0; j < d; ++j) {
          const double diff = ci[j] - cj[j];
          dci[j] -= scale * diff;
          dcj[j] += scale * diff;
        }
      }
    }
  }
  return result;
}

LossBreakdown heterogeneity_loss(const MiniBatch& batch, const Matrix& features,
                                 const Matrix& head_w, const std::vector<double>& head_b,
                                 const CenterStore& centers, const LossWeights& weights) {
  // Labels per batch row come from the by_class partition; each present
  // subject's class is recovered from its first batch sample (per-subject
  // class consistency is a dataset invariant checked upstream).
  const std::vector<int> lookup = batch_row_lookup(batch, lookup_domain(batch));
  std::vector<int> labels(batch.indices.size());
  for (std::size_t c = 0; c < batch.by_class.size(); ++c) {
    for (int ds_index : batch.by_class[c]) {
      const int row = lookup[static_cast<std::size_t>(ds_index)];
      if (row < 0) {
        throw std::invalid_argument("by_class refers to dataset index " +
                                    std::to_string(ds_index) + " that is not in the batch");
      }
      labels[static_cast<std::size_t>(row)] = static_cast<int>(c);
    }
  }
  std::vector<int> present_subjects;
  std::vector<int> subject_class(static_cast<std::size_t>(centers.subject_centers.rows), -1);
  for (std::size_t s = 0; s < batch.by_subject.size(); ++s) {
    if (batch.by_subject[s].empty()) continue;
    present_subjects.push_back(static_cast<int>(s));
    const int row = lookup[static_cast<std::size_t>(batch.by_subject[s].front())];
    subject_class[s] = labels[static_cast<std::size_t>(row)];
  }

  const CrossEntropyResult ce = cross_entropy(features, labels, head_w, head_b);
  const CenterTermResult cls = class_center_loss(batch, features, centers);
  const CenterTermResult sub = subject_center_loss(batch, features, centers);
  const SubjectClassResult sc = subject_class_center_loss(present_subjects, centers, subject_class);

  LossBreakdown out;
  out.ce = ce.value;
  out.class_center = cls.value;
  out.subject_center = sub.value;
  out.subject_class = sc.value;
  out.total = ce.value + weights.lambda1 * cls.value + weights.lambda2 * sub.value +
              weights.lambda3 * sc.value;

  out.d_features = ce.d_features;
  for (std::size_t i = 0; i < out.d_features.data.size(); ++i) {
    out.d_features.data[i] += weights.lambda1 * cls.d_features.data[i] +
                              weights.lambda2 * sub.d_features.data[i];
  }
  out.d_head_w = ce.d_w;
  out.d_head_b = ce.d_b;
  out.d_class_centers = cls.d_centers;
  for (double& v : out.d_class_centers.data) v *= weights.lambda1;
  out.d_subject_centers = sub.d_centers;
  for (std::size_t i = 0; i < out.d_subject_centers.data.size(); ++i) {
    out.d_subject_centers.data[i] = weights.lambda2 * out.d_subject_centers.data[i] +
                                    weights.lambda3 * sc.d_subject_centers.data[i];
  }
  return out;
}

FdReport finite_difference_check(const std::function<double()>& loss_fn,
                                 const std::vector<FdGroup>& groups, double epsilon,
                                 double tolerance, std::uint64_t subsample_seed) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
  constexpr std::size_t kSubsampleAbove = 1000;

  FdReport report;
  report.pass = true;
  for (const FdGroup& group : groups) {
    FdGroupReport gr;
    gr.name = group.name;

    std::vector<std::size_t> coords;
    if (group.size > kSubsampleAbove) {
      // Seeded subsample without replacement keeps large checks tractable
      // while staying reproducible.
      Rng rng(mix_seed(subsample_seed, seed_tag::fd_subsample));
      std::vector<std::size_t> all(group.size);
      for (std::size_t i = 0; i < group.size; ++i) all[i] = i;
      rng.shuffle(all.data(), all.size());
      coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(kSubsampleAbove));
      std::sort(coords.begin(), coords.end());
    } else {
      coords.resize(group.size);
      for (std::size_t i = 0; i < group.size; ++i) coords[i] = i;
    }

    double max_abs_diff = 0.0;
    double max_abs_fd = 0.0;
    for (std::size_t idx : coords) {
      const double saved = group.values[idx];
      group.values[idx] = saved + epsilon;
      const double up = loss_fn();
      group.values[idx] = saved - epsilon;
      const double down = loss_fn();
      group.values[idx] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        gr.finite = false;
        break;
      }
      const double fd = (up - down) / (2.0 * epsilon);
      max_abs_diff = std::max(max_abs_diff, std::abs(group.analytic[idx] - fd));
      max_abs_fd = std::max(max_abs_fd, std::abs(fd));
    }
    if (gr.finite) {
      gr.max_rel_error = max_abs_diff / std::max(1.0, max_abs_fd);
      gr.pass = gr.max_rel_error <= tolerance;
    } else {
      gr.max_rel_error = std::numeric_limits<double>::infinity();
      gr.pass = false;
    }
    report.pass = report.pass && gr.pass;
    report.groups.push_back(std::move(gr));
  }
  return report;
}

}  // namespace hetero
