#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "efs/metrics.hpp"

using namespace efs;
namespace fs = std::filesystem;

namespace {

NdArray full_mask(int h, int w) { return NdArray({h, w}, 1.0); }

NdArray random_depths(int h, int w, uint64_t seed, double lo = 1.0, double hi = 10.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  NdArray out({h, w});
  for (auto& v : out.data) v = dist(rng);
  return out;
}

// Scalar loop oracle, kept deliberately naive.
Metrics metrics_oracle(const NdArray& pred, const NdArray& gt, const NdArray& mask) {
  double se = 0, rel = 0;
  int64_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] <= 0.5 || gt.data[i] <= 0.0) continue;
    ++n;
    se += (pred.data[i] - gt.data[i]) * (pred.data[i] - gt.data[i]);
    rel += std::fabs(pred.data[i] - gt.data[i]) / gt.data[i];
    const double ratio = std::max(pred.data[i] / gt.data[i], gt.data[i] / pred.data[i]);
    if (ratio < 1.25) ++d1;
    if (ratio < 1.25 * 1.25) ++d2;
    if (ratio < 1.25 * 1.25 * 1.25) ++d3;
  }
  Metrics m;
  m.rmse_m = std::sqrt(se / n);
  m.absrel = rel / n;
  m.delta1 = double(d1) / n;
  m.delta2 = double(d2) / n;
  m.delta3 = double(d3) / n;
  m.pixel_count = n;
  return m;
}

}  // namespace

TEST_CASE("compute_metrics worked examples") {
  SUBCASE("perfect prediction") {
    const NdArray gt = random_depths(4, 4, 1);
    const Metrics m = compute_metrics(gt, gt, full_mask(4, 4));
    CHECK(m.rmse_m == 0.0);
    CHECK(m.absrel == 0.0);
    CHECK(m.delta1 == 1.0);
    CHECK(m.delta2 == 1.0);
    CHECK(m.delta3 == 1.0);
    CHECK(m.pixel_count == 16);
  }

  SUBCASE("uniform 1.2x overestimate") {
    const NdArray gt = random_depths(4, 4, 2);
    NdArray pred = gt;
    for (auto& v : pred.data) v *= 1.2;
    const Metrics m = compute_metrics(pred, gt, full_mask(4, 4));
    CHECK(m.absrel == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(m.delta1 == 1.0);  // 1.2 < 1.25
  }

  SUBCASE("single pixel, ratio 2") {
    NdArray pred({1, 1}), gt({1, 1});
    pred.data[0] = 2.0;
    gt.data[0] = 1.0;
    const Metrics m = compute_metrics(pred, gt, full_mask(1, 1));
    CHECK(m.rmse_m == 1.0);
    CHECK(m.absrel == 1.0);
    CHECK(m.delta1 == 0.0);
    CHECK(m.delta2 == 0.0);
    CHECK(m.delta3 == 0.0);  // 2 > 1.25^3 = 1.953125
  }
}

TEST_CASE("compute_metrics matches the scalar loop oracle on random instances") {
  for (uint64_t seed : {3ULL, 4ULL, 5ULL, 6ULL}) {
    const NdArray gt = random_depths(8, 8, seed);
    NdArray pred = random_depths(8, 8, seed + 50, 0.8, 12.0);
    NdArray mask({8, 8});
    std::mt19937_64 rng(seed + 100);
    for (auto& v : mask.data) v = (rng() & 1) ? 1.0 : 0.0;
    mask.data[0] = 1.0;  // nonempty

    const Metrics got = compute_metrics(pred, gt, mask);
    const Metrics expected = metrics_oracle(pred, gt, mask);
    CHECK(got.rmse_m == doctest::Approx(expected.rmse_m).epsilon(1e-6));
    CHECK(got.absrel == doctest::Approx(expected.absrel).epsilon(1e-6));
    CHECK(got.delta1 == expected.delta1);
    CHECK(got.delta2 == expected.delta2);
    CHECK(got.delta3 == expected.delta3);
    CHECK(got.pixel_count == expected.pixel_count);

    // Delta monotonicity holds for every evaluation.
    CHECK(got.delta1 <= got.delta2);
    CHECK(got.delta2 <= got.delta3);
  }
}

TEST_CASE("metrics are invariant under pixel permutations") {
  const NdArray gt = random_depths(6, 6, 7);
  const NdArray pred = random_depths(6, 6, 8);
  const Metrics base = compute_metrics(pred, gt, full_mask(6, 6));

  std::vector<int> perm(36);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(9);
  std::shuffle(perm.begin(), perm.end(), rng);
  NdArray gt_p({6, 6}), pred_p({6, 6});
  for (int i = 0; i < 36; ++i) {
    gt_p.data[i] = gt.data[perm[i]];
    pred_p.data[i] = pred.data[perm[i]];
  }
  const Metrics permuted = compute_metrics(pred_p, gt_p, full_mask(6, 6));
  CHECK(base.rmse_m == doctest::Approx(permuted.rmse_m).epsilon(1e-12));
  CHECK(base.absrel == doctest::Approx(permuted.absrel).epsilon(1e-12));
  CHECK(base.delta1 == permuted.delta1);
}

TEST_CASE("empty effective masks are reported distinctly") {
  const NdArray gt = random_depths(4, 4, 10);
  NdArray mask({4, 4}, 0.0);
  CHECK_THROWS_AS(compute_metrics(gt, gt, mask), EmptyMaskError);

  NdArray zero_gt({4, 4}, 0.0);
  CHECK_THROWS_AS(compute_metrics(gt, zero_gt, full_mask(4, 4)), EmptyMaskError);
}

TEST_CASE("evaluate aggregates pixel-weighted over manifest samples") {
  const fs::path dir = fs::temp_directory_path() / "efs_eval_test";
  fs::remove_all(dir);
  const FocalSweep sweep{1.0, 10.0, 1.0, 0.0, 16};
  const EncodingConfig enc{4, 16, 16};
  SceneConfig scene;
  scene.height = 16;
  scene.width = 16;
  scene.num_objects = 2;
  SceneConfig scene2 = scene;
  scene2.seed = 42;
  const DatasetManifest manifest =
      build_dataset({scene, scene2}, LensConfig{}, sweep, EventSimConfig{}, enc, dir);

  SUBCASE("ground truth as predictor scores perfectly") {
    Estimator oracle = [](const LoadedSample& s) {
      SparseDepth out;
      out.depth_map = s.depth_gt;
      out.mask = s.mask;
      return out;
    };
    const EvalReport report = evaluate(manifest, dir, oracle);
    CHECK(report.aggregate.rmse_m == 0.0);
    CHECK(report.aggregate.delta1 == 1.0);
    REQUIRE(report.per_sample.size() == 2);
    CHECK(report.aggregate.pixel_count ==
          report.per_sample[0].metrics.pixel_count + report.per_sample[1].metrics.pixel_count);
  }

  SUBCASE("classical baseline stays within one sweep step on the toy set") {
    const EvalReport report = evaluate(manifest, dir, classical_estimator(ReversalConfig{}));
    CHECK(report.aggregate.pixel_count > 0);
    CHECK(report.aggregate.rmse_m <= sweep.focal_step_m());
  }

  SUBCASE("unreadable samples abort with the sample id") {
    DatasetManifest broken = manifest;
    broken.samples[1].voxel_path = "missing.ten1";
    Estimator oracle = [](const LoadedSample& s) {
      SparseDepth out;
      out.depth_map = s.depth_gt;
      out.mask = s.mask;
      return out;
    };
    CHECK_THROWS_WITH_AS(evaluate(broken, dir, oracle), doctest::Contains("scene_1"), IoError);
  }

  SUBCASE("report csv has per-sample rows plus the aggregate") {
    Estimator oracle = [](const LoadedSample& s) {
      SparseDepth out;
      out.depth_map = s.depth_gt;
      out.mask = s.mask;
      return out;
    };
    const std::string csv = metrics_report_csv(evaluate(manifest, dir, oracle));
    CHECK(csv.find("pixel-weighted") != std::string::npos);
    CHECK(csv.find("scene_0") != std::string::npos);
    CHECK(csv.find("scene_1") != std::string::npos);
    CHECK(csv.find("aggregate") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("ablation report structure and reproducibility") {
  const fs::path dir = fs::temp_directory_path() / "efs_ablation_test";
  fs::remove_all(dir);
  const FocalSweep sweep{1.0, 10.0, 1.0, 0.0, 16};
  const EncodingConfig enc{4, 16, 16};
  std::vector<SceneConfig> scenes;
  for (int i = 0; i < 3; ++i) {
    SceneConfig sc;
    sc.height = 16;
    sc.width = 16;
    sc.num_objects = 2;
    sc.seed = 10 + i;
    scenes.push_back(sc);
  }
  const DatasetManifest manifest =
      build_dataset(scenes, LensConfig{}, sweep, EventSimConfig{}, enc, dir);

  ModelConfig base;
  base.num_bins = 4;
  base.base_channels = 4;
  base.attention_dim = 4;
  base.num_levels = 2;
  base.rdb_layers = 1;
  base.rdb_growth = 2;
  base.attention_downsample = 2;
  AblationConfig cfg;
  cfg.split_fraction = 0.67;
  cfg.train.iterations = 4;

  const auto rows = ablation_run(manifest, dir, base, cfg);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].name == "baseline");
  CHECK_FALSE(rows[0].use_fdcm);
  CHECK_FALSE(rows[0].use_mdfb);
  CHECK(rows[1].use_fdcm);
  CHECK_FALSE(rows[1].use_mdfb);
  CHECK_FALSE(rows[2].use_fdcm);
  CHECK(rows[2].use_mdfb);
  CHECK(rows[3].use_fdcm);
  CHECK(rows[3].use_mdfb);
  for (const auto& row : rows) CHECK(row.ok);

  const auto rows2 = ablation_run(manifest, dir, base, cfg);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].metrics.rmse_m == rows2[i].metrics.rmse_m);
  }

  const std::string csv = ablation_report_csv(rows);
  CHECK(csv.find("baseline,0,0,ok") != std::string::npos);
  CHECK(csv.find("full,1,1,ok") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("masked_rmse ignores unmasked and zero-gt pixels") {
  NdArray pred({2, 2}), gt({2, 2}), mask({2, 2}, 1.0);
  pred.data = {2.0, 5.0, 7.0, 9.0};
  gt.data = {1.0, 5.0, 0.0, 9.0};
  mask.data[1] = 0.0;
  // Only pixels 0 and 3 count: errors 1 and 0.
  CHECK(masked_rmse(pred, gt, mask) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  NdArray empty({2, 2}, 0.0);
  CHECK(std::isnan(masked_rmse(pred, gt, empty)));
}
