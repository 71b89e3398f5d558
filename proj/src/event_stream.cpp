#include "efs/event_stream.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace efs {

void FocalSweep::validate() const {
  if (!(d_f_start_m > 0.0)) {
    throw std::invalid_argument("FocalSweep: d_f_start_m must be positive, got " +
                                std::to_string(d_f_start_m));
  }
  if (!(d_f_end_m > d_f_start_m)) {
    throw std::invalid_argument("FocalSweep: d_f_end_m must exceed d_f_start_m");
  }
  if (!(duration_s > 0.0)) {
    throw std::invalid_argument("FocalSweep: duration_s must be positive");
  }
  if (num_samples < 2) {
    throw std::invalid_argument("FocalSweep: num_samples must be >= 2, got " +
                                std::to_string(num_samples));
  }
}

namespace {
// Slack for timestamps produced by interpolation arithmetic at the span ends.
double span_slack(const FocalSweep& sweep) {
  return 1e-9 * std::max(1.0, sweep.duration_s);
}
}  // namespace

double time_to_focal_distance(const FocalSweep& sweep, double t_s) {
  sweep.validate();
  if (t_s < sweep.t_start_s - span_slack(sweep) || t_s > sweep.t_end_s() + span_slack(sweep)) {
    throw std::invalid_argument("time_to_focal_distance: t=" + std::to_string(t_s) +
                                " outside sweep span [" + std::to_string(sweep.t_start_s) + ", " +
                                std::to_string(sweep.t_end_s()) + "]");
  }
  const double u = (t_s - sweep.t_start_s) / sweep.duration_s;
  return sweep.d_f_start_m + u * (sweep.d_f_end_m - sweep.d_f_start_m);
}

double focal_distance_to_time(const FocalSweep& sweep, double d_f_m) {
  sweep.validate();
  const double range = sweep.d_f_end_m - sweep.d_f_start_m;
  const double slack = 1e-9 * range;
  if (d_f_m < sweep.d_f_start_m - slack || d_f_m > sweep.d_f_end_m + slack) {
    throw std::invalid_argument("focal_distance_to_time: d_f=" + std::to_string(d_f_m) +
                                " outside sweep range");
  }
  return sweep.t_start_s + (d_f_m - sweep.d_f_start_m) / range * sweep.duration_s;
}

void sort_events(std::vector<Event>& events) {
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.t_s != b.t_s) return a.t_s < b.t_s;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.polarity < b.polarity;
  });
}

void validate_stream(const EventStream& stream) {
  stream.sweep.validate();
  const double lo = stream.sweep.t_start_s - span_slack(stream.sweep);
  const double hi = stream.sweep.t_end_s() + span_slack(stream.sweep);
  double prev = lo;
  for (const Event& e : stream.events) {
    if (e.t_s < prev) throw std::invalid_argument("EventStream: timestamps not sorted");
    if (e.t_s < lo || e.t_s > hi) {
      throw std::invalid_argument("EventStream: timestamp outside sweep span");
    }
    if (e.x >= stream.width || e.y >= stream.height) {
      throw std::invalid_argument("EventStream: event coordinates out of bounds");
    }
    if (e.polarity != 1 && e.polarity != -1) {
      throw std::invalid_argument("EventStream: polarity must be +1 or -1");
    }
    prev = e.t_s;
  }
}

}  // namespace efs
