#pragma once

#include <optional>
#include <vector>

#include "efs/encodings.hpp"
#include "efs/event_stream.hpp"
#include "efs/io.hpp"

namespace efs {

// Per-pixel metric depth plus a binary validity mask; masked-out entries
// hold 0.
struct SparseDepth {
  NdArray depth_map;  // H x W meters
  NdArray mask;       // H x W in {0,1}
};

struct ReversalConfig {
  int min_events_per_side = 3;  // run support required on both sides
  int smoothing_window = 3;     // events, odd

  void validate() const;
};

// Finds the polarity reversal of one pixel's time-sorted event sequence:
// the boundary between the adjacent opposite-polarity runs (after majority
// smoothing) with the greatest combined length, ties toward the earlier
// boundary. Returns the midpoint between the last event before the boundary
// and the first after, or nothing when no reversal qualifies.
std::optional<double> detect_reversal_time(const std::vector<Event>& pixel_events,
                                           const ReversalConfig& cfg);

// Depth at each pixel with a detected reversal at t*:
// time_to_focal_distance(sweep, t*). Mask marks exactly those pixels.
SparseDepth estimate_sparse_depth(const EventStream& stream, const ReversalConfig& cfg);

}  // namespace efs
