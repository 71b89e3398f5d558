#pragma once

#include <cstdint>
#include <vector>

namespace efs {

// Linear focal sweep: the focal distance moves from d_f_start_m to d_f_end_m
// while time runs over [t_start_s, t_start_s + duration_s]. num_samples is
// the number of rendered frames along the sweep.
struct FocalSweep {
  double d_f_start_m = 1.0;
  double d_f_end_m = 10.0;
  double duration_s = 1.0;
  double t_start_s = 0.0;
  int num_samples = 64;

  double t_end_s() const { return t_start_s + duration_s; }
  // Focal distance step between consecutive frames.
  double focal_step_m() const {
    return (d_f_end_m - d_f_start_m) / (num_samples - 1);
  }
  // Throws std::invalid_argument when a field violates its range.
  void validate() const;
};

// d_f at time t. t must lie within the sweep span (tiny slack for rounding).
double time_to_focal_distance(const FocalSweep& sweep, double t_s);
// Exact inverse of time_to_focal_distance; d_f must lie within the sweep range.
double focal_distance_to_time(const FocalSweep& sweep, double d_f_m);

struct Event {
  double t_s = 0.0;
  uint16_t x = 0;
  uint16_t y = 0;
  int8_t polarity = 1;  // +1 or -1
};

struct EventStream {
  std::vector<Event> events;  // sorted by (t, y, x, polarity)
  int width = 0;
  int height = 0;
  FocalSweep sweep;

  size_t count() const { return events.size(); }
};

// Sorts by (t, y, x, polarity). The full key makes the order deterministic
// regardless of how per-pixel event lists were merged.
void sort_events(std::vector<Event>& events);

// Checks timestamps nondecreasing, within the sweep span and coordinates in
// bounds. Throws std::invalid_argument on violation.
void validate_stream(const EventStream& stream);

}  // namespace efs
