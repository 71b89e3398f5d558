#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "efs/encodings.hpp"
#include "efs/event_sim.hpp"
#include "efs/optics.hpp"

namespace efs {

// Single-cell white noise by default: the sharpest texture gives the
// strongest focus cue during the sweep.
struct TextureConfig {
  int cell_px = 1;          // coarsest noise lattice cell
  int octaves = 1;
  double min_value = 0.05;  // luminance range of the texture
  double max_value = 1.0;
};

struct SceneConfig {
  int num_objects = 6;
  double depth_min_m = 1.5;
  double depth_max_m = 9.0;
  double wall_depth_m = 9.5;
  TextureConfig texture;
  int height = 64;
  int width = 64;
  uint64_t seed = 1;

  void validate() const;
};

// Textured wall plane plus textured axis-aligned rectangles at random depths,
// nearer rectangles painted over farther ones. Deterministic from the seed.
Scene generate_scene(const SceneConfig& cfg);

// Band-limited value noise in [min_value, max_value]; deterministic.
Image noise_texture(int height, int width, const TextureConfig& cfg, uint64_t seed);

struct SampleRecord {
  std::string id;
  std::string events_path;   // paths relative to the manifest directory
  std::string voxel_path;
  std::string surface_path;
  std::string mask_path;
  std::string depth_gt_path;
};

struct DatasetManifest {
  std::string split = "full";
  LensConfig lens;
  FocalSweep sweep;
  EventSimConfig sim;
  int num_bins = 8;
  std::vector<SampleRecord> samples;
};

/// Renders, simulates and encodes every scene, writing
/// out_dir/scene_<i>/{events.efs1, voxel.ten1, surface.ten1, mask.ten1,
/// depth_gt.ten1}; the manifest is written last as the completion marker.
/// Partial outputs of a failed scene are removed.
DatasetManifest build_dataset(const std::vector<SceneConfig>& scene_cfgs, const LensConfig& lens,
                              const FocalSweep& sweep, const EventSimConfig& sim,
                              const EncodingConfig& enc, const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Deterministic disjoint shuffle-split; throws when either side would be empty.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction, uint64_t seed);

struct LoadedSample {
  std::string id;
  EventStream stream;
  NdArray voxel;
  NdArray surface;
  NdArray mask;
  NdArray depth_gt;
};

LoadedSample load_sample(const std::filesystem::path& manifest_dir, const DatasetManifest& manifest,
                         const SampleRecord& record);

}  // namespace efs
