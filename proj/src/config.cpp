#include "efs/config.hpp"

#include <sstream>

namespace efs {

const std::vector<KeySpec>& RunConfig::schema() {
  static const std::vector<KeySpec> keys = {
      {"lens.focal_length_m", "double", "m", "lens focal length F", "0.05"},
      {"lens.f_number", "double", "-", "lens f-number f", "8"},
      {"lens.pixel_pitch_m", "double", "m/px", "sensor pixel pitch", "2e-6"},
      {"lens.k_sigma", "double", "-", "PSF sigma per unit CoC diameter", "0.5"},
      {"sweep.d_f_start_m", "double", "m", "focal distance at sweep start", "1.0"},
      {"sweep.d_f_end_m", "double", "m", "focal distance at sweep end", "10.0"},
      {"sweep.duration_s", "double", "s", "sweep duration", "1.0"},
      {"sweep.t_start_s", "double", "s", "sweep start time", "0.0"},
      {"sweep.num_samples", "int", "frames", "rendered frames per sweep", "64"},
      {"sim.threshold_c", "double", "log units", "event contrast threshold c", "0.15"},
      {"sim.log_eps", "double", "-", "luminance floor before the log", "1e-3"},
      {"sim.noise_rate_hz_per_px", "double", "Hz/px", "noise event rate", "0.0"},
      {"sim.seed", "int", "-", "noise RNG seed", "7"},
      {"encoding.num_bins", "int", "bins", "time bins N of both encodings", "8"},
      {"scene.count", "int", "scenes", "number of scenes to generate", "4"},
      {"scene.num_objects", "int", "-", "rectangles per scene", "6"},
      {"scene.depth_min_m", "double", "m", "nearest object depth", "1.5"},
      {"scene.depth_max_m", "double", "m", "farthest object depth", "9.0"},
      {"scene.wall_depth_m", "double", "m", "background wall depth", "9.5"},
      {"scene.height", "int", "px", "scene height", "64"},
      {"scene.width", "int", "px", "scene width", "64"},
      {"scene.seed", "int", "-", "base scene seed; scene i uses seed + i", "1"},
      {"scene.texture.cell_px", "int", "px", "coarsest noise cell", "1"},
      {"scene.texture.octaves", "int", "-", "noise octaves", "1"},
      {"scene.texture.min", "double", "-", "texture luminance minimum", "0.05"},
      {"scene.texture.max", "double", "-", "texture luminance maximum", "1.0"},
      {"model.base_channels", "int", "channels", "feature width of the trunk", "16"},
      {"model.num_levels", "int", "levels", "UNet encoder levels", "3"},
      {"model.attention_dim", "int", "channels", "attention dim d (= base_channels)", "16"},
      {"model.rdb_layers", "int", "convs", "convolutions per residual dense block", "3"},
      {"model.rdb_growth", "int", "channels", "growth channels per RDB conv", "8"},
      {"model.use_fdcm", "bool", "-", "enable cross-modal attention", "true"},
      {"model.use_mdfb", "bool", "-", "enable multi-level depth fusion", "true"},
      {"model.seed", "int", "-", "parameter init seed", "42"},
      {"model.attention_downsample", "int", "-", "token grid reduction in FDCM", "4"},
      {"model.depth_scale_m", "double", "m", "output unit scale of the depth head", "10.0"},
      {"loss.alpha", "double", "-", "weight of the L2 depth term", "128"},
      {"loss.beta", "double", "-", "weight of the gradient term", "1"},
      {"train.iterations", "int", "steps", "Adam steps", "500"},
      {"train.learning_rate", "double", "-", "Adam learning rate", "5e-4"},
      {"train.seed", "int", "-", "sample order seed", "0"},
      {"train.trace_every", "int", "steps", "loss trace stride", "10"},
      {"baseline.min_events_per_side", "int", "events", "reversal support per side", "3"},
      {"baseline.smoothing_window", "int", "events", "polarity majority window (odd)", "3"},
      {"split.fraction", "double", "-", "training fraction of the split", "0.8"},
      {"split.seed", "int", "-", "split shuffle seed", "0"},
  };
  return keys;
}

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const KeySpec& spec : schema()) cfg.kv_.set(spec.key, spec.default_value);
  return cfg;
}

RunConfig RunConfig::parse(const std::string& text) {
  FlatKv parsed;
  try {
    parsed = FlatKv::parse(text);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  RunConfig cfg = defaults();
  for (const auto& [key, value] : parsed.entries) {
    bool known = false;
    for (const KeySpec& spec : schema()) {
      if (key == spec.key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key: " + key);
    cfg.kv_.set(key, value);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse(text);
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return kv_.get_double(key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

int64_t RunConfig::get_int(const std::string& key) const {
  try {
    return kv_.get_int(key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  try {
    return kv_.get_bool(key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

LensConfig RunConfig::lens() const {
  LensConfig lens;
  lens.focal_length_m = get_double("lens.focal_length_m");
  lens.f_number = get_double("lens.f_number");
  lens.pixel_pitch_m = get_double("lens.pixel_pitch_m");
  lens.k_sigma = get_double("lens.k_sigma");
  lens.validate();
  return lens;
}

FocalSweep RunConfig::sweep() const {
  FocalSweep sweep;
  sweep.d_f_start_m = get_double("sweep.d_f_start_m");
  sweep.d_f_end_m = get_double("sweep.d_f_end_m");
  sweep.duration_s = get_double("sweep.duration_s");
  sweep.t_start_s = get_double("sweep.t_start_s");
  sweep.num_samples = static_cast<int>(get_int("sweep.num_samples"));
  sweep.validate();
  return sweep;
}

EventSimConfig RunConfig::sim() const {
  EventSimConfig sim;
  sim.threshold_c = get_double("sim.threshold_c");
  sim.log_eps = get_double("sim.log_eps");
  sim.noise_rate_hz_per_px = get_double("sim.noise_rate_hz_per_px");
  sim.seed = static_cast<uint64_t>(get_int("sim.seed"));
  sim.validate();
  return sim;
}

EncodingConfig RunConfig::encoding() const {
  EncodingConfig enc;
  enc.num_bins = static_cast<int>(get_int("encoding.num_bins"));
  enc.height = static_cast<int>(get_int("scene.height"));
  enc.width = static_cast<int>(get_int("scene.width"));
  enc.validate();
  return enc;
}

int RunConfig::scene_count() const {
  const int count = static_cast<int>(get_int("scene.count"));
  if (count < 1) throw ConfigError("scene.count must be >= 1");
  return count;
}

SceneConfig RunConfig::scene(int index) const {
  SceneConfig scene;
  scene.num_objects = static_cast<int>(get_int("scene.num_objects"));
  scene.depth_min_m = get_double("scene.depth_min_m");
  scene.depth_max_m = get_double("scene.depth_max_m");
  scene.wall_depth_m = get_double("scene.wall_depth_m");
  scene.height = static_cast<int>(get_int("scene.height"));
  scene.width = static_cast<int>(get_int("scene.width"));
  scene.seed = static_cast<uint64_t>(get_int("scene.seed")) + static_cast<uint64_t>(index);
  scene.texture.cell_px = static_cast<int>(get_int("scene.texture.cell_px"));
  scene.texture.octaves = static_cast<int>(get_int("scene.texture.octaves"));
  scene.texture.min_value = get_double("scene.texture.min");
  scene.texture.max_value = get_double("scene.texture.max");
  scene.validate();
  return scene;
}

ModelConfig RunConfig::model() const {
  ModelConfig model;
  model.num_bins = static_cast<int>(get_int("encoding.num_bins"));
  model.base_channels = static_cast<int>(get_int("model.base_channels"));
  model.num_levels = static_cast<int>(get_int("model.num_levels"));
  model.attention_dim = static_cast<int>(get_int("model.attention_dim"));
  model.rdb_layers = static_cast<int>(get_int("model.rdb_layers"));
  model.rdb_growth = static_cast<int>(get_int("model.rdb_growth"));
  model.use_fdcm = get_bool("model.use_fdcm");
  model.use_mdfb = get_bool("model.use_mdfb");
  model.seed = static_cast<uint64_t>(get_int("model.seed"));
  model.attention_downsample = static_cast<int>(get_int("model.attention_downsample"));
  model.depth_scale_m = get_double("model.depth_scale_m");
  model.validate();
  return model;
}

LossConfig RunConfig::loss() const {
  LossConfig loss;
  loss.alpha = get_double("loss.alpha");
  loss.beta = get_double("loss.beta");
  loss.validate();
  return loss;
}

TrainConfig RunConfig::train() const {
  TrainConfig train;
  train.iterations = static_cast<int>(get_int("train.iterations"));
  train.learning_rate = get_double("train.learning_rate");
  train.seed = static_cast<uint64_t>(get_int("train.seed"));
  train.trace_every = static_cast<int>(get_int("train.trace_every"));
  train.validate();
  return train;
}

ReversalConfig RunConfig::baseline() const {
  ReversalConfig cfg;
  cfg.min_events_per_side = static_cast<int>(get_int("baseline.min_events_per_side"));
  cfg.smoothing_window = static_cast<int>(get_int("baseline.smoothing_window"));
  cfg.validate();
  return cfg;
}

double RunConfig::split_fraction() const { return get_double("split.fraction"); }
uint64_t RunConfig::split_seed() const { return static_cast<uint64_t>(get_int("split.seed")); }

std::string RunConfig::describe_keys() {
  std::ostringstream os;
  for (const KeySpec& spec : schema()) {
    os << "  " << spec.key << " (" << spec.type << ", " << spec.units << ") - "
       << spec.description << " [default " << spec.default_value << "]\n";
  }
  return os.str();
}

}  // namespace efs
