#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "anchorfuse/alignment.hpp"

using namespace anchorfuse;

namespace {

Matrix random_matrix(SeededRng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.next_normal();
  return m;
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("self alignment is exact at alpha 0") {
  SeededRng rng(17);
  Matrix data = random_matrix(rng, 50, 3);
  AlignmentMap map = fit_alignment(data, data, 0.0);
  CHECK(map.train_r2 == doctest::Approx(1.0).epsilon(1e-9));
  Matrix standardized = apply_scaler(map.source_scaler, data);
  CHECK((standardized * map.W - standardized).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("noiseless linear relation is recovered") {
  SeededRng rng(23);
  Matrix source = random_matrix(rng, 200, 4);
  Matrix mixing = random_matrix(rng, 4, 2);
  Matrix anchor = source * mixing;
  AlignmentMap map = fit_alignment(source, anchor, 1e-6);
  CHECK(map.train_r2 >= 0.999);
}

TEST_CASE("alignment defaults and metadata") {
  SeededRng rng(29);
  Matrix source = random_matrix(rng, 30, 3);
  Matrix anchor = random_matrix(rng, 30, 2);
  AlignmentMap map = fit_alignment(source, anchor, 10.0);
  CHECK(map.alpha == 10.0);
  CHECK(map.W.rows() == 3);
  CHECK(map.W.cols() == 2);
  CHECK(map.train_r2 <= 1.0);
}

TEST_CASE("fit_alignment error paths") {
  SeededRng rng(31);
  Matrix source = random_matrix(rng, 10, 3);
  Matrix anchor = random_matrix(rng, 9, 2);
  CHECK_THROWS_AS(fit_alignment(source, anchor, 1.0), DimensionError);
  CHECK_THROWS_AS(fit_alignment(source.topRows(1), source.topRows(1), 1.0), InvalidInput);
}

TEST_CASE("apply_alignment composes scaler and map") {
  AlignmentMap map;
  map.W = Matrix::Identity(2, 2);
  map.source_scaler.means = Vector::Zero(2);
  map.source_scaler.scales = Vector::Ones(2);
  map.anchor_scaler = map.source_scaler;
  Matrix data(2, 2);
  data << 1, 2, 3, 4;
  CHECK(apply_alignment(map, data) == data);

  map.W = Matrix::Constant(1, 1, 1.0 / 6.0);
  map.source_scaler.means = Vector::Zero(1);
  map.source_scaler.scales = Vector::Ones(1);
  Matrix scalar(1, 1);
  scalar << 1;
  CHECK(apply_alignment(map, scalar)(0, 0) == doctest::Approx(1.0 / 6.0));

  CHECK_THROWS_AS(apply_alignment(map, data), DimensionError);
}

TEST_CASE("the source train mean maps near the origin") {
  SeededRng rng(37);
  Matrix source = random_matrix(rng, 60, 4);
  source.rowwise() += Eigen::RowVector4d(3, -2, 5, 0.5);
  Matrix anchor = random_matrix(rng, 60, 3);
  AlignmentMap map = fit_alignment(source, anchor, 1.0);
  Matrix mean_row = map.source_scaler.means.transpose();
  CHECK(apply_alignment(map, mean_row).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("train R^2 does not increase with alpha") {
  SeededRng rng(41);
  Matrix source = random_matrix(rng, 80, 5);
  Matrix anchor = random_matrix(rng, 80, 3);
  double previous = fit_alignment(source, anchor, 0.0).train_r2;
  for (double alpha : {0.1, 1.0, 10.0, 100.0}) {
    double current = fit_alignment(source, anchor, alpha).train_r2;
    CHECK(current <= previous + 1e-12);
    previous = current;
  }
}

TEST_CASE("invertible transforms reach R^2 of 1 as alpha vanishes") {
  SeededRng rng(43);
  Matrix source = random_matrix(rng, 100, 4);
  Matrix transform = random_matrix(rng, 4, 4);
  transform += 4.0 * Matrix::Identity(4, 4);  // comfortably invertible
  Matrix anchor = source * transform;
  AlignmentMap map = fit_alignment(source, anchor, 1e-8);
  CHECK(map.train_r2 >= 1.0 - 1e-6);
}

TEST_CASE("report_alignment_quality echoes stored values") {
  SeededRng rng(47);
  Matrix data = random_matrix(rng, 40, 3);
  AlignmentMap map = fit_alignment(data, data, 0.0);
  map.source_name = "self";
  map.anchor_name = "self";
  auto rows = report_alignment_quality({map});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].source == "self");
  CHECK(rows[0].train_r2 == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(report_alignment_quality({}), EmptyInput);
}

TEST_CASE("alignment map serialization round trips bit-exactly") {
  SeededRng rng(53);
  Matrix source = random_matrix(rng, 25, 4);
  Matrix anchor = random_matrix(rng, 25, 3);
  AlignmentMap map = fit_alignment(source, anchor, 2.5);
  map.source_name = "llama";
  map.anchor_name = "gemma";

  auto dir = std::filesystem::path("alignment_test_tmp");
  std::filesystem::create_directories(dir);
  auto path = dir / "map.alnm";
  save_alignment_map(map, path);
  AlignmentMap loaded = load_alignment_map(path);
  CHECK(loaded.source_name == map.source_name);
  CHECK(loaded.anchor_name == map.anchor_name);
  CHECK(loaded.alpha == map.alpha);
  CHECK(loaded.train_r2 == map.train_r2);
  CHECK(loaded.W == map.W);
  CHECK(loaded.source_scaler.means == map.source_scaler.means);
  CHECK(loaded.anchor_scaler.scales == map.anchor_scaler.scales);

  // Identical fits serialize to identical bytes.
  auto path2 = dir / "map2.alnm";
  AlignmentMap refit = fit_alignment(source, anchor, 2.5);
  refit.source_name = "llama";
  refit.anchor_name = "gemma";
  save_alignment_map(refit, path2);
  CHECK(file_bytes(path) == file_bytes(path2));
}
