#include "efs/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace efs {

void SceneConfig::validate() const {
  if (num_objects < 0) throw std::invalid_argument("SceneConfig: num_objects must be nonnegative");
  if (!(depth_min_m > 0.0) || !(depth_max_m > depth_min_m)) {
    throw std::invalid_argument("SceneConfig: need 0 < depth_min_m < depth_max_m");
  }
  if (wall_depth_m < depth_max_m) {
    throw std::invalid_argument("SceneConfig: wall_depth_m must be >= depth_max_m");
  }
  if (height <= 0 || width <= 0) throw std::invalid_argument("SceneConfig: empty scene");
  if (texture.cell_px < 1 || texture.octaves < 1) {
    throw std::invalid_argument("SceneConfig: bad texture parameters");
  }
  if (!(texture.min_value >= 0.0) || !(texture.max_value <= 1.0) ||
      !(texture.min_value < texture.max_value)) {
    throw std::invalid_argument("SceneConfig: texture range must satisfy 0 <= min < max <= 1");
  }
}

Image noise_texture(int height, int width, const TextureConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> acc(static_cast<size_t>(height) * width, 0.0);
  double amplitude = 1.0;
  double total_amplitude = 0.0;
  for (int octave = 0; octave < cfg.octaves; ++octave) {
    const int cell = std::max(1, cfg.cell_px >> octave);
    const int gh = height / cell + 2;
    const int gw = width / cell + 2;
    std::vector<double> lattice(static_cast<size_t>(gh) * gw);
    for (auto& v : lattice) v = uniform(rng);
    for (int y = 0; y < height; ++y) {
      const double fy = static_cast<double>(y) / cell;
      const int y0 = static_cast<int>(fy);
      const double ty = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x) / cell;
        const int x0 = static_cast<int>(fx);
        const double tx = fx - x0;
        const double v00 = lattice[static_cast<size_t>(y0) * gw + x0];
        const double v01 = lattice[static_cast<size_t>(y0) * gw + x0 + 1];
        const double v10 = lattice[static_cast<size_t>(y0 + 1) * gw + x0];
        const double v11 = lattice[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
        const double v = (v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty;
        acc[static_cast<size_t>(y) * width + x] += amplitude * v;
      }
    }
    total_amplitude += amplitude;
    amplitude *= 0.5;
  }
  // Normalize each texture to the full configured range for strong contrast.
  double lo = acc[0], hi = acc[0];
  for (double v : acc) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  Image img(height, width);
  for (size_t i = 0; i < acc.size(); ++i) {
    const double unit = scale == 0.0 ? 0.5 : (acc[i] - lo) * scale;
    img.data[i] = static_cast<float>(cfg.min_value + unit * (cfg.max_value - cfg.min_value));
  }
  (void)total_amplitude;
  return img;
}

Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> depth_dist(cfg.depth_min_m, cfg.depth_max_m);
  std::uniform_int_distribution<int> width_dist(cfg.width / 8, cfg.width / 2);
  std::uniform_int_distribution<int> height_dist(cfg.height / 8, cfg.height / 2);

  struct Rect {
    int x0, y0, x1, y1;
    double depth;
    uint64_t texture_seed;
  };
  std::vector<Rect> rects;
  rects.reserve(cfg.num_objects);
  for (int i = 0; i < cfg.num_objects; ++i) {
    Rect r;
    const int rw = std::max(2, width_dist(rng));
    const int rh = std::max(2, height_dist(rng));
    std::uniform_int_distribution<int> x_dist(0, std::max(0, cfg.width - rw));
    std::uniform_int_distribution<int> y_dist(0, std::max(0, cfg.height - rh));
    r.x0 = x_dist(rng);
    r.y0 = y_dist(rng);
    r.x1 = std::min(cfg.width, r.x0 + rw);
    r.y1 = std::min(cfg.height, r.y0 + rh);
    r.depth = depth_dist(rng);
    r.texture_seed = rng();
    rects.push_back(r);
  }

  Scene scene;
  scene.aif_image = noise_texture(cfg.height, cfg.width, cfg.texture, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  scene.depth_map = Image(cfg.height, cfg.width, static_cast<float>(cfg.wall_depth_m));

  // Painter's order: far to near, so nearer rectangles occlude farther ones.
  std::stable_sort(rects.begin(), rects.end(),
                   [](const Rect& a, const Rect& b) { return a.depth > b.depth; });
  for (const Rect& r : rects) {
    const Image tex = noise_texture(r.y1 - r.y0, r.x1 - r.x0, cfg.texture, r.texture_seed);
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        scene.aif_image.at(y, x) = tex.at(y - r.y0, x - r.x0);
        scene.depth_map.at(y, x) = static_cast<float>(r.depth);
      }
    }
  }
  scene.validate();
  return scene;
}

// ---------------------------------------------------------------------------

namespace {

void sweep_to_kv(const FocalSweep& sweep, FlatKv& kv) {
  kv.set_double("sweep.d_f_start_m", sweep.d_f_start_m);
  kv.set_double("sweep.d_f_end_m", sweep.d_f_end_m);
  kv.set_double("sweep.duration_s", sweep.duration_s);
  kv.set_double("sweep.t_start_s", sweep.t_start_s);
  kv.set_int("sweep.num_samples", sweep.num_samples);
}

FocalSweep sweep_from_kv(const FlatKv& kv) {
  FocalSweep sweep;
  sweep.d_f_start_m = kv.get_double("sweep.d_f_start_m");
  sweep.d_f_end_m = kv.get_double("sweep.d_f_end_m");
  sweep.duration_s = kv.get_double("sweep.duration_s");
  sweep.t_start_s = kv.get_double("sweep.t_start_s");
  sweep.num_samples = static_cast<int>(kv.get_int("sweep.num_samples"));
  return sweep;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  FlatKv kv;
  kv.set("format", "EFS-DEPTH-MANIFEST-1");
  kv.set("split", manifest.split);
  kv.set_double("lens.focal_length_m", manifest.lens.focal_length_m);
  kv.set_double("lens.f_number", manifest.lens.f_number);
  kv.set_double("lens.pixel_pitch_m", manifest.lens.pixel_pitch_m);
  kv.set_double("lens.k_sigma", manifest.lens.k_sigma);
  sweep_to_kv(manifest.sweep, kv);
  kv.set_double("sim.threshold_c", manifest.sim.threshold_c);
  kv.set_double("sim.log_eps", manifest.sim.log_eps);
  kv.set_double("sim.noise_rate_hz_per_px", manifest.sim.noise_rate_hz_per_px);
  kv.set_int("sim.seed", static_cast<int64_t>(manifest.sim.seed));
  kv.set_int("encoding.num_bins", manifest.num_bins);
  kv.set_int("sample.count", static_cast<int64_t>(manifest.samples.size()));
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    const std::string p = "sample." + std::to_string(i) + ".";
    const SampleRecord& r = manifest.samples[i];
    kv.set(p + "id", r.id);
    kv.set(p + "events", r.events_path);
    kv.set(p + "voxel", r.voxel_path);
    kv.set(p + "surface", r.surface_path);
    kv.set(p + "mask", r.mask_path);
    kv.set(p + "depth_gt", r.depth_gt_path);
  }
  write_text_atomic(path, kv.serialize());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const FlatKv kv = FlatKv::parse(read_text(path));
  if (kv.get_string("format") != "EFS-DEPTH-MANIFEST-1") {
    throw IoError("unrecognized manifest format in " + path.string());
  }
  DatasetManifest manifest;
  manifest.split = kv.get_string("split");
  manifest.lens.focal_length_m = kv.get_double("lens.focal_length_m");
  manifest.lens.f_number = kv.get_double("lens.f_number");
  manifest.lens.pixel_pitch_m = kv.get_double("lens.pixel_pitch_m");
  manifest.lens.k_sigma = kv.get_double("lens.k_sigma");
  manifest.sweep = sweep_from_kv(kv);
  manifest.sim.threshold_c = kv.get_double("sim.threshold_c");
  manifest.sim.log_eps = kv.get_double("sim.log_eps");
  manifest.sim.noise_rate_hz_per_px = kv.get_double("sim.noise_rate_hz_per_px");
  manifest.sim.seed = static_cast<uint64_t>(kv.get_int("sim.seed"));
  manifest.num_bins = static_cast<int>(kv.get_int("encoding.num_bins"));
  const int64_t count = kv.get_int("sample.count");
  for (int64_t i = 0; i < count; ++i) {
    const std::string p = "sample." + std::to_string(i) + ".";
    SampleRecord r;
    r.id = kv.get_string(p + "id");
    r.events_path = kv.get_string(p + "events");
    r.voxel_path = kv.get_string(p + "voxel");
    r.surface_path = kv.get_string(p + "surface");
    r.mask_path = kv.get_string(p + "mask");
    r.depth_gt_path = kv.get_string(p + "depth_gt");
    manifest.samples.push_back(std::move(r));
  }
  return manifest;
}

DatasetManifest build_dataset(const std::vector<SceneConfig>& scene_cfgs, const LensConfig& lens,
                              const FocalSweep& sweep, const EventSimConfig& sim,
                              const EncodingConfig& enc, const std::filesystem::path& out_dir) {
  lens.validate();
  sweep.validate();
  sim.validate();
  enc.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.lens = lens;
  manifest.sweep = sweep;
  manifest.sim = sim;
  manifest.num_bins = enc.num_bins;

  for (size_t i = 0; i < scene_cfgs.size(); ++i) {
    SceneConfig scene_cfg = scene_cfgs[i];
    if (scene_cfg.height != enc.height || scene_cfg.width != enc.width) {
      throw std::invalid_argument("build_dataset: scene size does not match encoding config");
    }
    if (scene_cfg.depth_min_m < sweep.d_f_start_m || scene_cfg.wall_depth_m > sweep.d_f_end_m) {
      throw std::invalid_argument(
          "build_dataset: scene depth range must lie within the sweep focal range");
    }
    const std::string id = "scene_" + std::to_string(i);
    const std::filesystem::path scene_dir = out_dir / id;
    try {
      std::filesystem::create_directories(scene_dir);
      const Scene scene = generate_scene(scene_cfg);
      const auto frames = render_focal_sweep(scene, lens, sweep);

      EventSimConfig scene_sim = sim;
      scene_sim.seed = sim.seed + i;  // independent noise per scene
      EventStream stream = simulate_events(frames, scene_sim);
      if (scene_sim.noise_rate_hz_per_px > 0.0) stream = inject_noise(stream, scene_sim);

      const VoxelGrid voxel = build_voxel_grid(stream, enc);
      const DepthSurface surface = build_depth_surface(stream, enc);
      const BinaryMask mask = build_mask(stream, enc);

      write_efs1(scene_dir / "events.efs1", stream);
      write_ten1(scene_dir / "voxel.ten1", voxel.values);
      write_ten1(scene_dir / "surface.ten1", surface.values);
      write_ten1(scene_dir / "mask.ten1", mask.values);
      write_ten1(scene_dir / "depth_gt.ten1", from_image(scene.depth_map));

      SampleRecord record;
      record.id = id;
      record.events_path = id + "/events.efs1";
      record.voxel_path = id + "/voxel.ten1";
      record.surface_path = id + "/surface.ten1";
      record.mask_path = id + "/mask.ten1";
      record.depth_gt_path = id + "/depth_gt.ten1";
      manifest.samples.push_back(std::move(record));
    } catch (...) {
      std::filesystem::remove_all(scene_dir, ec);
      throw;
    }
  }
  write_manifest(out_dir / "manifest.txt", manifest);
  return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: train_fraction must lie in (0, 1)");
  }
  const size_t n = manifest.samples.size();
  const size_t k = static_cast<size_t>(std::lround(train_fraction * static_cast<double>(n)));
  if (k == 0 || k >= n) {
    throw std::invalid_argument("split_dataset: too few samples for a " +
                                std::to_string(train_fraction) + " split of " + std::to_string(n));
  }
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetManifest train = manifest;
  DatasetManifest val = manifest;
  train.samples.clear();
  val.samples.clear();
  train.split = "train";
  val.split = "val";
  for (size_t i = 0; i < n; ++i) {
    (i < k ? train : val).samples.push_back(manifest.samples[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

LoadedSample load_sample(const std::filesystem::path& manifest_dir, const DatasetManifest& manifest,
                         const SampleRecord& record) {
  LoadedSample sample;
  sample.id = record.id;
  sample.stream = read_efs1(manifest_dir / record.events_path);
  sample.stream.sweep = manifest.sweep;  // restore the full sweep (sample count)
  sample.voxel = read_ten1(manifest_dir / record.voxel_path);
  sample.surface = read_ten1(manifest_dir / record.surface_path);
  sample.mask = read_ten1(manifest_dir / record.mask_path);
  sample.depth_gt = read_ten1(manifest_dir / record.depth_gt_path);
  return sample;
}

}  // namespace efs
