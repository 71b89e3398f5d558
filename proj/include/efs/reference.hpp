#pragma once

// Brute-force reference implementations used by self-checks and tests. These
// deliberately share no code with the production paths they cross-check.

#include <vector>

#include "efs/event_stream.hpp"
#include "efs/optics.hpp"

namespace efs {

struct ReferenceEvent {
  double t_s;
  int polarity;
};

// Dense threshold scanner: samples the piecewise-linear log signal at
// `oversample` substeps per segment and emits an event whenever the signal
// moves a full threshold away from the running reference. The loop emits
// repeatedly within a substep when the signal moved by more than one
// threshold.
std::vector<ReferenceEvent> dense_threshold_scan(const std::vector<double>& times,
                                                 const std::vector<double>& log_values,
                                                 double threshold_c, int oversample);

// Per-pixel scan of a rendered sweep; the log conversion matches the
// simulator's configuration but the crossing search is the dense scanner.
std::vector<ReferenceEvent> dense_threshold_scan_pixel(const std::vector<LuminanceImage>& frames,
                                                       int x, int y, double threshold_c,
                                                       double log_eps, int oversample);

}  // namespace efs
