#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "efs/event_stream.hpp"
#include "efs/optics.hpp"

namespace efs {

struct EventSimConfig {
  double threshold_c = 0.15;           // log-intensity contrast threshold
  double log_eps = 1e-3;               // luminance floor before the log
  double noise_rate_hz_per_px = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

// Idealized event sensor over a rendered focal sweep. Per pixel, the
// log-luminance is interpolated linearly between frames and an event is
// emitted whenever it crosses the running reference level +- threshold_c;
// the reference then moves by exactly one threshold step. Crossing
// timestamps are closed-form. Output is merged and time-sorted.
EventStream simulate_events(const std::vector<LuminanceImage>& frames, const EventSimConfig& cfg);

// Adds uniformly timed random-polarity noise events at the configured
// per-pixel rate, reproducibly from cfg.seed; the result is re-sorted.
EventStream inject_noise(const EventStream& stream, const EventSimConfig& cfg);

// Log-luminance with the configured floor, as used by the simulator.
inline double log_luminance(double value, double log_eps) {
  return std::log(value + log_eps);
}

}  // namespace efs
