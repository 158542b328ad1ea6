#include "hetero/core.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hetero {

namespace {

std::string fmt(const char* pattern, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

}  // namespace

std::vector<std::string> validate_dataset(const Dataset& ds) {
  std::vector<std::string> report;

  if (ds.n_classes < 2) {
    report.push_back(fmt("dataset: n_classes must be >= 2, got %d", ds.n_classes));
  }
  if (ds.n_subjects < 1) {
    report.push_back(fmt("dataset: n_subjects must be >= 1, got %d", ds.n_subjects));
  }
  if (static_cast<int>(ds.subject_class.size()) != ds.n_subjects) {
    report.push_back(fmt("dataset: subject_class has %zu entries, expected %d",
                         ds.subject_class.size(), ds.n_subjects));
    return report;  // downstream checks index into subject_class
  }

  std::vector<int> subjects_per_class(std::max(ds.n_classes, 0), 0);
  for (int s = 0; s < ds.n_subjects; ++s) {
    const int c = ds.subject_class[s];
    if (c < 0 || c >= ds.n_classes) {
      report.push_back(fmt("subject %d: class id %d outside [0, %d)", s, c, ds.n_classes));
    } else {
      ++subjects_per_class[c];
    }
  }
  for (int c = 0; c < ds.n_classes; ++c) {
    if (subjects_per_class[c] == 0) {
      report.push_back(fmt("class %d: has no subjects", c));
    }
  }

  const int d = ds.dim();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    if (static_cast<int>(s.features.size()) != d) {
      report.push_back(fmt("sample %zu: feature dimension %zu, expected %d", i,
                           s.features.size(), d));
    }
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      if (!std::isfinite(s.features[j])) {
        report.push_back(fmt("sample %zu: non-finite feature at index %zu", i, j));
        break;
      }
    }
    if (s.subject < 0 || s.subject >= ds.n_subjects) {
      report.push_back(fmt("sample %zu: subject id %d outside [0, %d)", i, s.subject,
                           ds.n_subjects));
      continue;
    }
    if (s.class_id < 0 || s.class_id >= ds.n_classes) {
      report.push_back(fmt("sample %zu: class id %d outside [0, %d)", i, s.class_id,
                           ds.n_classes));
      continue;
    }
    if (s.class_id != ds.subject_class[s.subject]) {
      report.push_back(fmt("sample %zu: class %d contradicts subject %d whose class is %d",
                           i, s.class_id, s.subject, ds.subject_class[s.subject]));
    }
  }
  return report;
}

MiniBatch partition_batch(const Dataset& ds, const std::vector<int>& indices) {
  MiniBatch batch;
  batch.indices = indices;
  batch.by_class.assign(ds.n_classes, {});
  batch.by_subject.assign(ds.n_subjects, {});

  std::unordered_set<int> seen;
  seen.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(ds.samples.size())) {
      throw std::out_of_range(fmt("sample index %d out of range [0, %zu)", idx,
                                  ds.samples.size()));
    }
    if (!seen.insert(idx).second) {
      throw std::invalid_argument(fmt("sample index %d appears twice in the batch", idx));
    }
    const Sample& s = ds.samples[idx];
    batch.by_class[s.class_id].push_back(idx);
    batch.by_subject[s.subject].push_back(idx);
  }
  return batch;
}

Matrix gather_inputs(const Dataset& ds, const std::vector<int>& indices) {
  const int d = ds.dim();
  Matrix out(static_cast<int>(indices.size()), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= static_cast<int>(ds.samples.size())) {
      throw std::out_of_range(fmt("sample index %d out of range [0, %zu)", idx,
                                  ds.samples.size()));
    }
    const Sample& s = ds.samples[idx];
    if (static_cast<int>(s.features.size()) != d) {
      throw std::invalid_argument(fmt("sample %d: feature dimension mismatch", idx));
    }
    std::memcpy(out.row(static_cast<int>(i)), s.features.data(), sizeof(double) * d);
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);

  out << "d=" << ds.dim() << " n_c=" << ds.n_classes << " n_s=" << ds.n_subjects << "\n";
  char buf[64];
  for (const Sample& s : ds.samples) {
    out << s.subject << ',' << s.class_id;
    for (double f : s.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", f);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);

  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error(path + ": empty file");

  int d = -1, n_c = -1, n_s = -1;
  if (std::sscanf(header.c_str(), "d=%d n_c=%d n_s=%d", &d, &n_c, &n_s) != 3) {
    throw std::runtime_error(path + ": malformed header '" + header + "'");
  }
  if (d < 1 || n_c < 2 || n_s < 1) {
    throw std::runtime_error(path + ": header values out of range");
  }

  Dataset ds;
  ds.n_classes = n_c;
  ds.n_subjects = n_s;
  ds.subject_class.assign(n_s, -1);

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Sample s;
    const char* p = line.c_str();
    char* end = nullptr;
    s.subject = static_cast<int>(std::strtol(p, &end, 10));
    if (end == p || *end != ',') {
      throw std::runtime_error(fmt("%s:%zu: malformed sample line", path.c_str(), line_no));
    }
    p = end + 1;
    s.class_id = static_cast<int>(std::strtol(p, &end, 10));
    if (end == p) {
      throw std::runtime_error(fmt("%s:%zu: malformed sample line", path.c_str(), line_no));
    }
    p = end;
    s.features.reserve(d);
    while (*p == ',') {
      ++p;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw std::runtime_error(fmt("%s:%zu: malformed float", path.c_str(), line_no));
      }
      s.features.push_back(v);
      p = end;
    }
    if (static_cast<int>(s.features.size()) != d) {
      throw std::runtime_error(fmt("%s:%zu: expected %d features, got %zu", path.c_str(),
                                   line_no, d, s.features.size()));
    }
    if (s.subject < 0 || s.subject >= n_s || s.class_id < 0 || s.class_id >= n_c) {
      throw std::runtime_error(fmt("%s:%zu: subject or class id out of range", path.c_str(),
                                   line_no));
    }
    if (ds.subject_class[s.subject] == -1) {
      ds.subject_class[s.subject] = s.class_id;
    } else if (ds.subject_class[s.subject] != s.class_id) {
      throw std::runtime_error(fmt("%s:%zu: subject %d carries two classes", path.c_str(),
                                   line_no, s.subject));
    }
    ds.samples.push_back(std::move(s));
  }

  for (int s = 0; s < n_s; ++s) {
    if (ds.subject_class[s] == -1) {
      throw std::runtime_error(fmt("%s: subject %d has no samples; class mapping unrecoverable",
                                   path.c_str(), s));
    }
  }
  return ds;
}

}  // namespace hetero
