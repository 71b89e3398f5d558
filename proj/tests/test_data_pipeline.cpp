#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "efs/data_pipeline.hpp"

using namespace efs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SceneConfig small_scene(uint64_t seed) {
  SceneConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.num_objects = 3;
  cfg.seed = seed;
  return cfg;
}

std::string file_bytes(const fs::path& p) { return read_text(p); }

}  // namespace

TEST_CASE("scene generation") {
  SUBCASE("no objects leaves a constant-depth textured wall") {
    SceneConfig cfg = small_scene(1);
    cfg.num_objects = 0;
    const Scene scene = generate_scene(cfg);
    for (float d : scene.depth_map.data) CHECK(d == doctest::Approx(cfg.wall_depth_m));
    float lo = 1.0f, hi = 0.0f;
    for (float v : scene.aif_image.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi - lo > 0.3f);  // textured, not constant
  }

  SUBCASE("same seed reproduces the scene exactly") {
    const Scene a = generate_scene(small_scene(7));
    const Scene b = generate_scene(small_scene(7));
    CHECK(a.aif_image.data == b.aif_image.data);
    CHECK(a.depth_map.data == b.depth_map.data);
    const Scene c = generate_scene(small_scene(8));
    CHECK(a.depth_map.data != c.depth_map.data);
  }

  SUBCASE("20 objects stay within the configured depth range") {
    SceneConfig cfg;
    cfg.height = 48;
    cfg.width = 48;
    cfg.num_objects = 20;
    cfg.depth_min_m = 1.5;
    cfg.depth_max_m = 10.0;
    cfg.wall_depth_m = 10.0;
    cfg.seed = 3;
    const Scene scene = generate_scene(cfg);
    for (float d : scene.depth_map.data) {
      CHECK(d >= 1.5f);
      CHECK(d <= 10.0f);
    }
    for (float v : scene.aif_image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  SUBCASE("config validation") {
    SceneConfig cfg = small_scene(1);
    cfg.wall_depth_m = cfg.depth_max_m - 1.0;
    CHECK_THROWS_AS(generate_scene(cfg), std::invalid_argument);
  }
}

TEST_CASE("noise texture respects its range and is deterministic") {
  TextureConfig cfg;
  cfg.min_value = 0.2;
  cfg.max_value = 0.8;
  const Image a = noise_texture(20, 30, cfg, 5);
  const Image b = noise_texture(20, 30, cfg, 5);
  CHECK(a.data == b.data);
  for (float v : a.data) {
    CHECK(v >= 0.2f);
    CHECK(v <= 0.8f);
  }
}

TEST_CASE("build_dataset writes every artifact and the manifest last") {
  TempDir tmp("efs_dataset_test");
  const LensConfig lens;
  const FocalSweep sweep{1.0, 10.0, 1.0, 0.0, 16};
  EventSimConfig sim;
  const EncodingConfig enc{4, 16, 16};

  const DatasetManifest manifest =
      build_dataset({small_scene(1)}, lens, sweep, sim, enc, tmp.path);
  REQUIRE(manifest.samples.size() == 1);
  CHECK(fs::exists(tmp.path / "manifest.txt"));
  CHECK(fs::exists(tmp.path / "scene_0/events.efs1"));
  CHECK(fs::exists(tmp.path / "scene_0/voxel.ten1"));
  CHECK(fs::exists(tmp.path / "scene_0/surface.ten1"));
  CHECK(fs::exists(tmp.path / "scene_0/mask.ten1"));
  CHECK(fs::exists(tmp.path / "scene_0/depth_gt.ten1"));

  const LoadedSample sample = load_sample(tmp.path, manifest, manifest.samples[0]);
  CHECK(sample.voxel.shape == std::vector<int>{4, 2, 16, 16});
  CHECK(sample.depth_gt.shape == std::vector<int>{16, 16});
  CHECK(sample.stream.count() > 0);

  // Textured scenes produce events at most pixels under the default threshold.
  double density = 0.0;
  for (double v : sample.mask.data) density += v;
  density /= sample.mask.data.size();
  CHECK(density > 0.5);
}

TEST_CASE("rebuilding a dataset with identical configs is byte-identical") {
  TempDir a("efs_dataset_a"), b("efs_dataset_b");
  const FocalSweep sweep{1.0, 10.0, 1.0, 0.0, 16};
  const EncodingConfig enc{4, 16, 16};
  build_dataset({small_scene(2)}, LensConfig{}, sweep, EventSimConfig{}, enc, a.path);
  build_dataset({small_scene(2)}, LensConfig{}, sweep, EventSimConfig{}, enc, b.path);
  for (const char* rel : {"manifest.txt", "scene_0/events.efs1", "scene_0/voxel.ten1",
                          "scene_0/surface.ten1", "scene_0/mask.ten1", "scene_0/depth_gt.ten1"}) {
    CHECK(file_bytes(a.path / rel) == file_bytes(b.path / rel));
  }
}

TEST_CASE("manifest round-trips losslessly") {
  TempDir tmp("efs_manifest_test");
  fs::create_directories(tmp.path);
  DatasetManifest manifest;
  manifest.split = "train";
  manifest.lens.focal_length_m = 0.035;
  manifest.sweep = FocalSweep{1.25, 9.75, 0.5, 0.125, 48};
  manifest.sim.threshold_c = 0.121;
  manifest.sim.seed = 1234567;
  manifest.num_bins = 6;
  manifest.samples.push_back(
      SampleRecord{"s0", "s0/e.efs1", "s0/v.ten1", "s0/s.ten1", "s0/m.ten1", "s0/d.ten1"});

  write_manifest(tmp.path / "m.txt", manifest);
  const DatasetManifest loaded = read_manifest(tmp.path / "m.txt");
  CHECK(loaded.split == "train");
  CHECK(loaded.lens.focal_length_m == manifest.lens.focal_length_m);
  CHECK(loaded.sweep.d_f_start_m == manifest.sweep.d_f_start_m);
  CHECK(loaded.sweep.num_samples == 48);
  CHECK(loaded.sim.threshold_c == manifest.sim.threshold_c);
  CHECK(loaded.sim.seed == manifest.sim.seed);
  CHECK(loaded.num_bins == 6);
  REQUIRE(loaded.samples.size() == 1);
  CHECK(loaded.samples[0].id == "s0");
  CHECK(loaded.samples[0].surface_path == "s0/s.ten1");
}

TEST_CASE("split_dataset") {
  DatasetManifest manifest;
  for (int i = 0; i < 10; ++i) {
    manifest.samples.push_back(SampleRecord{"s" + std::to_string(i), "", "", "", "", ""});
  }

  SUBCASE("0.8 of 10 gives an 8/2 split") {
    const auto [train, val] = split_dataset(manifest, 0.8, 1);
    CHECK(train.samples.size() == 8);
    CHECK(val.samples.size() == 2);
    CHECK(train.split == "train");
    CHECK(val.split == "val");
  }

  SUBCASE("union is the original, intersection empty") {
    const auto [train, val] = split_dataset(manifest, 0.7, 2);
    std::vector<std::string> seen;
    for (const auto& s : train.samples) seen.push_back(s.id);
    for (const auto& s : val.samples) seen.push_back(s.id);
    std::sort(seen.begin(), seen.end());
    CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
    CHECK(seen.size() == 10);
  }

  SUBCASE("same seed reproduces the split") {
    const auto [a_train, a_val] = split_dataset(manifest, 0.8, 3);
    const auto [b_train, b_val] = split_dataset(manifest, 0.8, 3);
    for (size_t i = 0; i < a_train.samples.size(); ++i) {
      CHECK(a_train.samples[i].id == b_train.samples[i].id);
    }
  }

  SUBCASE("degenerate fractions are rejected") {
    CHECK_THROWS_AS(split_dataset(manifest, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(split_dataset(manifest, 1.0, 1), std::invalid_argument);
    DatasetManifest one;
    one.samples.push_back(manifest.samples[0]);
    CHECK_THROWS_AS(split_dataset(one, 0.5, 1), std::invalid_argument);
  }
}

TEST_CASE("build_dataset rejects scenes outside the sweep focal range") {
  TempDir tmp("efs_dataset_range");
  SceneConfig bad = small_scene(1);
  bad.depth_min_m = 0.5;  // below the sweep start
  const FocalSweep sweep{1.0, 10.0, 1.0, 0.0, 8};
  CHECK_THROWS_AS(build_dataset({bad}, LensConfig{}, sweep, EventSimConfig{},
                                EncodingConfig{4, 16, 16}, tmp.path),
                  std::invalid_argument);
  CHECK_FALSE(fs::exists(tmp.path / "manifest.txt"));
}
