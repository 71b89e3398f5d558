#include "efs/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace efs {

std::vector<ReferenceEvent> dense_threshold_scan(const std::vector<double>& times,
                                                 const std::vector<double>& log_values,
                                                 double threshold_c, int oversample) {
  if (times.size() != log_values.size() || times.size() < 2) {
    throw std::invalid_argument("dense_threshold_scan: need matching sample arrays of size >= 2");
  }
  if (oversample < 1) throw std::invalid_argument("dense_threshold_scan: oversample must be >= 1");

  std::vector<ReferenceEvent> events;
  double reference = log_values[0];
  for (size_t seg = 0; seg + 1 < times.size(); ++seg) {
    const double t0 = times[seg];
    const double t1 = times[seg + 1];
    const double l0 = log_values[seg];
    const double l1 = log_values[seg + 1];
    for (int step = 1; step <= oversample; ++step) {
      const double u = static_cast<double>(step) / oversample;
      const double t = t0 + u * (t1 - t0);
      const double level = l0 + u * (l1 - l0);
      while (level - reference >= threshold_c) {
        events.push_back(ReferenceEvent{t, +1});
        reference += threshold_c;
      }
      while (reference - level >= threshold_c) {
        events.push_back(ReferenceEvent{t, -1});
        reference -= threshold_c;
      }
    }
  }
  return events;
}

std::vector<ReferenceEvent> dense_threshold_scan_pixel(const std::vector<LuminanceImage>& frames,
                                                       int x, int y, double threshold_c,
                                                       double log_eps, int oversample) {
  std::vector<double> times(frames.size());
  std::vector<double> logs(frames.size());
  for (size_t i = 0; i < frames.size(); ++i) {
    times[i] = frames[i].timestamp_s;
    logs[i] = std::log(static_cast<double>(frames[i].values.at(y, x)) + log_eps);
  }
  return dense_threshold_scan(times, logs, threshold_c, oversample);
}

}  // namespace efs
