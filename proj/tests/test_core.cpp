#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "hetero/core.hpp"
#include "test_support.hpp"

using namespace hetero;

TEST_CASE("matrix indexing is row-major and equality is element-wise") {
  Matrix m(2, 3);
  m.at(0, 0) = 1.0;
  m.at(1, 2) = 5.0;
  CHECK(m.data[0] == 1.0);
  CHECK(m.data[5] == 5.0);
  CHECK(m.row(1)[2] == 5.0);

  Matrix n = m;
  CHECK(m == n);
  n.at(0, 1) = -1.0;
  CHECK_FALSE(m == n);
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  std::vector<double> v{0.5, 0.5, 0.2};
  CHECK(argmax_index(v) == 0);
  std::vector<double> w{0.1, 0.7, 0.7};
  CHECK(argmax_index(w) == 1);
  std::vector<double> single{3.0};
  CHECK(argmax_index(single) == 0);
}

TEST_CASE("well-formed dataset validates with an empty report") {
  Dataset ds = testutil::random_dataset(2, 3, 4, 5, 42);
  CHECK(validate_dataset(ds).empty());
}

TEST_CASE("subject carrying two classes is reported by subject") {
  Dataset ds = testutil::random_dataset(2, 3, 4, 5, 7);
  ds.samples[1].class_id = 1 - ds.samples[1].class_id;  // contradicts subject 0
  const auto report = validate_dataset(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].find("subject 0") != std::string::npos);
}

TEST_CASE("non-finite feature entry is reported by sample") {
  Dataset ds = testutil::random_dataset(2, 3, 4, 2, 9);
  ds.samples[3].features[2] = std::numeric_limits<double>::quiet_NaN();
  const auto report = validate_dataset(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].find("sample 3") != std::string::npos);

  ds.samples[3].features[2] = std::numeric_limits<double>::infinity();
  CHECK(validate_dataset(ds).size() == 1);
}

TEST_CASE("out-of-range ids and empty classes are reported") {
  Dataset ds = testutil::random_dataset(2, 3, 4, 2, 11);
  ds.samples[0].subject = 99;
  auto report = validate_dataset(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].find("sample 0") != std::string::npos);

  Dataset empty_class = testutil::random_dataset(2, 3, 4, 2, 11);
  empty_class.n_classes = 3;  // class 2 exists but owns no subjects
  report = validate_dataset(empty_class);
  REQUIRE(report.size() == 1);
  CHECK(report[0].find("class 2") != std::string::npos);
}

TEST_CASE("batch partition groups by class and subject preserving order") {
  // 4 samples: classes [0,0,1,1], subjects [0,1,2,3].
  Dataset ds;
  ds.n_classes = 2;
  ds.n_subjects = 4;
  ds.subject_class = {0, 0, 1, 1};
  for (int i = 0; i < 4; ++i) {
    Sample s;
    s.subject = i;
    s.class_id = ds.subject_class[i];
    s.features = {double(i)};
    ds.samples.push_back(s);
  }
  const MiniBatch batch = partition_batch(ds, {0, 1, 2, 3});
  CHECK(batch.by_class[0] == std::vector<int>{0, 1});
  CHECK(batch.by_class[1] == std::vector<int>{2, 3});
  for (int s = 0; s < 4; ++s) CHECK(batch.by_subject[s] == std::vector<int>{s});
}

TEST_CASE("batch from a single subject yields one subject subset equal to the batch") {
  Dataset ds = testutil::random_dataset(2, 2, 3, 6, 13);
  // samples 0..5 belong to subject 0
  const MiniBatch batch = partition_batch(ds, {2, 0, 4});
  CHECK(batch.by_subject[0] == std::vector<int>{2, 0, 4});
  CHECK(batch.by_subject[1].empty());
}

TEST_CASE("random batch partition matches a brute-force filter") {
  Dataset ds = testutil::random_dataset(3, 7, 5, 4, 17);
  std::mt19937_64 eng(99);
  std::vector<int> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::shuffle(all.begin(), all.end(), eng);
  std::vector<int> indices(all.begin(), all.begin() + 16);

  const MiniBatch batch = partition_batch(ds, indices);
  std::size_t class_total = 0, subject_total = 0;
  for (int c = 0; c < ds.n_classes; ++c) {
    std::vector<int> expected;
    for (int idx : indices)
      if (ds.samples[idx].class_id == c) expected.push_back(idx);
    CHECK(batch.by_class[c] == expected);
    class_total += expected.size();
  }
  for (int s = 0; s < ds.n_subjects; ++s) {
    std::vector<int> expected;
    for (int idx : indices)
      if (ds.samples[idx].subject == s) expected.push_back(idx);
    CHECK(batch.by_subject[s] == expected);
    subject_total += expected.size();
  }
  CHECK(class_total == indices.size());
  CHECK(subject_total == indices.size());
}

TEST_CASE("batch partition rejects bad indices") {
  Dataset ds = testutil::random_dataset(2, 2, 3, 2, 19);
  CHECK_THROWS_AS(partition_batch(ds, {0, 99}), std::out_of_range);
  CHECK_THROWS_AS(partition_batch(ds, {-1}), std::out_of_range);
  CHECK_THROWS_AS(partition_batch(ds, {1, 1}), std::invalid_argument);
}

TEST_CASE("gather_inputs copies the selected feature rows") {
  Dataset ds = testutil::random_dataset(2, 2, 3, 2, 23);
  const Matrix m = gather_inputs(ds, {3, 0});
  REQUIRE(m.rows == 2);
  REQUIRE(m.cols == 3);
  for (int j = 0; j < 3; ++j) {
    CHECK(m.at(0, j) == ds.samples[3].features[j]);
    CHECK(m.at(1, j) == ds.samples[0].features[j]);
  }
  CHECK_THROWS_AS(gather_inputs(ds, {99}), std::out_of_range);
}

TEST_CASE("dataset text format round-trips values exactly") {
  Dataset ds = testutil::random_dataset(2, 4, 6, 3, 29);
  ds.samples[0].features[0] = 1e-300;
  ds.samples[0].features[1] = -0.1;
  ds.samples[1].features[0] = 12345.678912345678;

  testutil::TempDir dir("core_roundtrip");
  const std::string path = dir.file("data.txt");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);

  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.n_classes == ds.n_classes);
  CHECK(back.n_subjects == ds.n_subjects);
  CHECK(back.subject_class == ds.subject_class);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].subject == ds.samples[i].subject);
    CHECK(back.samples[i].class_id == ds.samples[i].class_id);
    REQUIRE(back.samples[i].features.size() == ds.samples[i].features.size());
    for (std::size_t j = 0; j < ds.samples[i].features.size(); ++j) {
      // 17 significant digits make the round-trip bit-exact for doubles.
      CHECK(back.samples[i].features[j] == ds.samples[i].features[j]);
    }
  }
}

TEST_CASE("dataset loader rejects malformed files") {
  testutil::TempDir dir("core_badfiles");

  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir.file(name));
    out << text;
    return dir.file(name);
  };

  CHECK_THROWS_AS(load_dataset(dir.file("missing.txt")), std::runtime_error);
  CHECK_THROWS_AS(load_dataset(write("bad_header.txt", "dims 3 2 1\n")), std::runtime_error);
  CHECK_THROWS_AS(load_dataset(write("short_row.txt", "d=3 n_c=2 n_s=2\n0,0,1.0,2.0\n")),
                  std::runtime_error);
  CHECK_THROWS_AS(
      load_dataset(write("two_classes.txt",
                         "d=1 n_c=2 n_s=2\n0,0,1.0\n0,1,2.0\n1,1,3.0\n")),
      std::runtime_error);
  CHECK_THROWS_AS(
      load_dataset(write("orphan_subject.txt", "d=1 n_c=2 n_s=2\n0,0,1.0\n")),
      std::runtime_error);
}
