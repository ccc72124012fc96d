#include <doctest.h>

#include <filesystem>

#include "anchorfuse/aggregation.hpp"

using namespace anchorfuse;

namespace {

Matrix random_matrix(SeededRng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.next_normal();
  return m;
}

FusionConfig config_for(FusionStrategy strategy) {
  FusionConfig config;
  config.strategy = strategy;
  config.anchor_name = "anchor";
  return config;
}

}  // namespace

TEST_CASE("aligned_mean arithmetic") {
  Matrix anchor(1, 2);
  anchor << 2, 0;
  Matrix aligned(1, 2);
  aligned << 0, 2;
  Matrix fused = fuse(anchor, {aligned}, config_for(FusionStrategy::aligned_mean));
  CHECK(fused(0, 0) == 1.0);
  CHECK(fused(0, 1) == 1.0);

  // No sources: M = 1 and the anchor passes through unchanged.
  CHECK(fuse(anchor, {}, config_for(FusionStrategy::aligned_mean)) == anchor);
}

TEST_CASE("concatenation strategies stack blocks in order") {
  SeededRng rng(3);
  Matrix anchor = random_matrix(rng, 4, 3);
  Matrix source = random_matrix(rng, 4, 5);
  Matrix fused = fuse(anchor, {source}, config_for(FusionStrategy::raw_concat));
  CHECK(fused.cols() == 8);
  CHECK(fused.leftCols(3) == anchor);
  CHECK(fused.rightCols(5) == source);

  CHECK_THROWS_AS(fuse(anchor, {}, config_for(FusionStrategy::raw_concat)), InvalidConfig);
  CHECK_THROWS_AS(fuse(anchor, {}, config_for(FusionStrategy::aligned_concat)),
                  InvalidConfig);
}

TEST_CASE("fuse shape errors") {
  SeededRng rng(5);
  Matrix anchor = random_matrix(rng, 4, 3);
  Matrix short_rows = random_matrix(rng, 3, 3);
  Matrix wrong_cols = random_matrix(rng, 4, 2);
  CHECK_THROWS_AS(fuse(anchor, {short_rows}, config_for(FusionStrategy::aligned_mean)),
                  DimensionError);
  CHECK_THROWS_AS(fuse(anchor, {wrong_cols}, config_for(FusionStrategy::aligned_mean)),
                  DimensionError);
}

TEST_CASE("aligned_mean is permutation invariant over sources") {
  SeededRng rng(7);
  Matrix anchor = random_matrix(rng, 6, 4);
  Matrix a = random_matrix(rng, 6, 4);
  Matrix b = random_matrix(rng, 6, 4);
  Matrix c = random_matrix(rng, 6, 4);
  auto config = config_for(FusionStrategy::aligned_mean);
  CHECK(fuse(anchor, {a, b, c}, config) == fuse(anchor, {c, a, b}, config));
}

TEST_CASE("aligned_mean of identical views reproduces the anchor") {
  SeededRng rng(11);
  Matrix anchor = random_matrix(rng, 5, 3);
  Matrix fused = fuse(anchor, {anchor, anchor}, config_for(FusionStrategy::aligned_mean));
  CHECK((fused - anchor).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(fused.allFinite());
}

TEST_CASE("final scaler semantics delegate to the standardizer") {
  SeededRng rng(13);
  Matrix train = random_matrix(rng, 50, 3);
  train.col(2).setConstant(4.0);  // dead feature
  StandardScaler scaler = fit_final_scaler(train);
  CHECK(scaler.scales[2] == kScaleFloor);

  Matrix test = random_matrix(rng, 10, 3);
  Matrix once = apply_final(scaler, test);
  Matrix twice = apply_final(scaler, test);
  CHECK(once == twice);  // stateless apply, never re-fits
}

TEST_CASE("FusionModel featurize matches the manual path") {
  SeededRng rng(17);
  Matrix anchor_train = random_matrix(rng, 40, 3);
  Matrix source_train = random_matrix(rng, 40, 5);

  FusionModel fusion;
  fusion.config = config_for(FusionStrategy::aligned_mean);
  fusion.config.source_order = {"src"};
  fusion.anchor_scaler = fit_scaler(anchor_train);
  AlignmentMap map = fit_alignment(source_train, anchor_train, 1.0);
  map.source_name = "src";
  map.anchor_name = "anchor";
  fusion.maps.push_back(map);
  Matrix fused_train = fusion.fuse_views({anchor_train, source_train});
  fusion.final_scaler = fit_final_scaler(fused_train);

  Matrix expected =
      apply_final(fusion.final_scaler,
                  fuse(apply_scaler(fusion.anchor_scaler, anchor_train),
                       {apply_alignment(map, source_train)}, fusion.config));
  CHECK(fusion.featurize({anchor_train, source_train}) == expected);

  CHECK_THROWS_AS(fusion.featurize({anchor_train}), ConsistencyError);
}

TEST_CASE("raw_concat standardizes every encoder before stacking") {
  SeededRng rng(19);
  Matrix anchor_train = random_matrix(rng, 30, 2);
  Matrix source_train = 1000.0 * random_matrix(rng, 30, 3);  // wildly different scale

  FusionModel fusion;
  fusion.config = config_for(FusionStrategy::raw_concat);
  fusion.config.source_order = {"src"};
  fusion.raw_scalers = {fit_scaler(anchor_train), fit_scaler(source_train)};
  Matrix fused = fusion.fuse_views({anchor_train, source_train});
  // Both blocks end up on comparable scales once standardized.
  CHECK(fused.leftCols(2).cwiseAbs().maxCoeff() < 10.0);
  CHECK(fused.rightCols(3).cwiseAbs().maxCoeff() < 10.0);
}

TEST_CASE("single-view fusion equals the M=1 fused path") {
  SeededRng rng(23);
  Matrix train = random_matrix(rng, 40, 4);
  FusionModel single = fit_single_view_fusion("enc0", train);

  FusionModel fused;
  fused.config = config_for(FusionStrategy::aligned_mean);
  fused.config.anchor_name = "enc0";
  fused.anchor_scaler = fit_scaler(train);
  fused.final_scaler = fit_final_scaler(fused.fuse_views({train}));

  CHECK(single.featurize({train}) == fused.featurize({train}));
}

TEST_CASE("fusion model serialization round trips") {
  SeededRng rng(29);
  FusionModel fusion;
  fusion.config.strategy = FusionStrategy::raw_concat;
  fusion.config.anchor_name = "anchor";
  fusion.config.source_order = {"a", "b"};
  fusion.raw_scalers = {fit_scaler(random_matrix(rng, 10, 2)),
                        fit_scaler(random_matrix(rng, 10, 3)),
                        fit_scaler(random_matrix(rng, 10, 4))};
  fusion.anchor_scaler = fusion.raw_scalers[0];
  fusion.final_scaler = fit_scaler(random_matrix(rng, 10, 9));

  auto dir = std::filesystem::path("aggregation_test_tmp");
  std::filesystem::create_directories(dir);
  auto path = dir / "fusion.bin";
  save_fusion_model(fusion, path);
  FusionModel loaded = load_fusion_model(path);
  CHECK(loaded.config.strategy == fusion.config.strategy);
  CHECK(loaded.config.anchor_name == "anchor");
  CHECK(loaded.config.source_order == fusion.config.source_order);
  CHECK(loaded.raw_scalers.size() == 3);
  CHECK(loaded.raw_scalers[1].means == fusion.raw_scalers[1].means);
  CHECK(loaded.final_scaler.scales == fusion.final_scaler.scales);
}
