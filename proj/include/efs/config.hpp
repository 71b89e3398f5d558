#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "efs/classical_dff.hpp"
#include "efs/data_pipeline.hpp"
#include "efs/edff.hpp"
#include "efs/encodings.hpp"
#include "efs/event_sim.hpp"
#include "efs/optics.hpp"

namespace efs {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  const char* key;
  const char* type;  // double | int | bool
  const char* units;
  const char* description;
  const char* default_value;
};

/// Flat key = value run configuration. Unknown keys are rejected by name;
/// every module validates its own slice when it is extracted.
class RunConfig {
 public:
  static const std::vector<KeySpec>& schema();
  static RunConfig defaults();
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  LensConfig lens() const;
  FocalSweep sweep() const;
  EventSimConfig sim() const;
  EncodingConfig encoding() const;  // sensor size from scene.height/width
  int scene_count() const;
  SceneConfig scene(int index) const;  // scene i derives its seed from scene.seed + i
  ModelConfig model() const;           // num_bins mirrored from encoding.num_bins
  LossConfig loss() const;
  TrainConfig train() const;
  ReversalConfig baseline() const;
  double split_fraction() const;
  uint64_t split_seed() const;

  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// One line per schema key: name, type, units, description, default.
  static std::string describe_keys();

 private:
  FlatKv kv_;
};

}  // namespace efs
