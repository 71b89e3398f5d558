#include "efs/event_sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "efs/parallel.hpp"

namespace efs {

void EventSimConfig::validate() const {
  if (!(threshold_c > 0.0)) throw std::invalid_argument("EventSimConfig: threshold_c must be positive");
  if (!(log_eps > 0.0)) throw std::invalid_argument("EventSimConfig: log_eps must be positive");
  if (noise_rate_hz_per_px < 0.0) {
    throw std::invalid_argument("EventSimConfig: noise_rate_hz_per_px must be nonnegative");
  }
}

namespace {

void validate_frames(const std::vector<LuminanceImage>& frames) {
  if (frames.size() < 2) throw std::invalid_argument("simulate_events: need at least 2 frames");
  const int h = frames[0].values.height;
  const int w = frames[0].values.width;
  const double dt0 = frames[1].timestamp_s - frames[0].timestamp_s;
  for (size_t k = 1; k < frames.size(); ++k) {
    if (frames[k].values.height != h || frames[k].values.width != w) {
      throw std::invalid_argument("simulate_events: frame dimensions differ");
    }
    const double dt = frames[k].timestamp_s - frames[k - 1].timestamp_s;
    if (!(dt > 0.0)) throw std::invalid_argument("simulate_events: frame timestamps not increasing");
    if (std::abs(dt - dt0) > 1e-9 * std::max(1.0, dt0)) {
      throw std::invalid_argument("simulate_events: frame timestamps not uniform");
    }
  }
}

FocalSweep sweep_from_frames(const std::vector<LuminanceImage>& frames) {
  FocalSweep sweep;
  sweep.t_start_s = frames.front().timestamp_s;
  sweep.duration_s = frames.back().timestamp_s - frames.front().timestamp_s;
  sweep.d_f_start_m = frames.front().focal_distance_m;
  sweep.d_f_end_m = frames.back().focal_distance_m;
  sweep.num_samples = static_cast<int>(frames.size());
  return sweep;
}

}  // namespace

EventStream simulate_events(const std::vector<LuminanceImage>& frames, const EventSimConfig& cfg) {
  cfg.validate();
  validate_frames(frames);
  const int h = frames[0].values.height;
  const int w = frames[0].values.width;
  const double c = cfg.threshold_c;
  const size_t n = frames.size();

  // Per-pixel event lists, produced independently and merged afterwards.
  std::vector<std::vector<Event>> per_pixel(static_cast<size_t>(h) * w);
  parallel_chunks(h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        std::vector<Event>& out = per_pixel[static_cast<size_t>(y) * w + x];
        const double base = log_luminance(frames[0].values.at(y, x), cfg.log_eps);
        // The reference stays on the lattice base + k*c; tracking the
        // integer offset keeps repeated +-c updates exact.
        int64_t ref_steps = 0;
        double prev_log = base;
        double prev_t = frames[0].timestamp_s;
        for (size_t f = 1; f < n; ++f) {
          const double cur_log = log_luminance(frames[f].values.at(y, x), cfg.log_eps);
          const double cur_t = frames[f].timestamp_s;
          if (cur_log != prev_log) {
            const int dir = cur_log > prev_log ? 1 : -1;
            const double inv_slope = (cur_t - prev_t) / (cur_log - prev_log);
            while (true) {
              const double next_level = base + static_cast<double>(ref_steps + dir) * c;
              if (dir > 0 ? next_level > cur_log : next_level < cur_log) break;
              double t = prev_t + (next_level - prev_log) * inv_slope;
              t = std::clamp(t, prev_t, cur_t);
              out.push_back(Event{t, static_cast<uint16_t>(x), static_cast<uint16_t>(y),
                                  static_cast<int8_t>(dir)});
              ref_steps += dir;
            }
          }
          prev_log = cur_log;
          prev_t = cur_t;
        }
      }
    }
  });

  EventStream stream;
  stream.width = w;
  stream.height = h;
  stream.sweep = sweep_from_frames(frames);
  size_t total = 0;
  for (const auto& v : per_pixel) total += v.size();
  stream.events.reserve(total);
  for (const auto& v : per_pixel) stream.events.insert(stream.events.end(), v.begin(), v.end());
  sort_events(stream.events);
  return stream;
}

EventStream inject_noise(const EventStream& stream, const EventSimConfig& cfg) {
  cfg.validate();
  if (cfg.noise_rate_hz_per_px == 0.0) return stream;

  EventStream out = stream;
  const double expected = cfg.noise_rate_hz_per_px * stream.sweep.duration_s *
                          static_cast<double>(stream.width) * static_cast<double>(stream.height);
  std::mt19937_64 rng(cfg.seed);
  std::poisson_distribution<long long> count_dist(expected);
  std::uniform_real_distribution<double> time_dist(stream.sweep.t_start_s, stream.sweep.t_end_s());
  std::uniform_int_distribution<int> x_dist(0, stream.width - 1);
  std::uniform_int_distribution<int> y_dist(0, stream.height - 1);
  std::uniform_int_distribution<int> pol_dist(0, 1);

  const long long extra = count_dist(rng);
  out.events.reserve(out.events.size() + static_cast<size_t>(extra));
  for (long long i = 0; i < extra; ++i) {
    Event e;
    e.t_s = time_dist(rng);
    e.x = static_cast<uint16_t>(x_dist(rng));
    e.y = static_cast<uint16_t>(y_dist(rng));
    e.polarity = pol_dist(rng) ? 1 : -1;
    out.events.push_back(e);
  }
  sort_events(out.events);
  return out;
}

}  // namespace efs
