#include "efs/classical_dff.hpp"

#include <algorithm>
#include <stdexcept>

#include "efs/parallel.hpp"

namespace efs {

void ReversalConfig::validate() const {
  if (min_events_per_side < 1) {
    throw std::invalid_argument("ReversalConfig: min_events_per_side must be >= 1");
  }
  if (smoothing_window < 1 || smoothing_window % 2 == 0) {
    throw std::invalid_argument("ReversalConfig: smoothing_window must be a positive odd count");
  }
}

namespace {

struct Run {
  int polarity;
  int begin;  // inclusive event index
  int end;    // exclusive
  int length() const { return end - begin; }
};

std::vector<int8_t> majority_smooth(const std::vector<Event>& events, int window) {
  const int n = static_cast<int>(events.size());
  std::vector<int8_t> smoothed(n);
  const int half = window / 2;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    int sum = 0;
    for (int j = lo; j <= hi; ++j) sum += events[j].polarity;
    // Ties (possible in clipped windows) keep the original polarity.
    smoothed[i] = sum > 0 ? 1 : (sum < 0 ? -1 : events[i].polarity);
  }
  return smoothed;
}

}  // namespace

std::optional<double> detect_reversal_time(const std::vector<Event>& pixel_events,
                                           const ReversalConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(pixel_events.size());
  if (n < 2 * cfg.min_events_per_side) return std::nullopt;

  const std::vector<int8_t> smoothed = majority_smooth(pixel_events, cfg.smoothing_window);

  std::vector<Run> runs;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && smoothed[j] == smoothed[i]) ++j;
    runs.push_back(Run{smoothed[i], i, j});
    i = j;
  }
  if (runs.size() < 2) return std::nullopt;

  // Boundary between the jointly longest pair of adjacent opposing runs;
  // ties break toward the earlier boundary.
  int best = -1;
  int best_score = 0;
  for (size_t k = 0; k + 1 < runs.size(); ++k) {
    if (runs[k].length() < cfg.min_events_per_side ||
        runs[k + 1].length() < cfg.min_events_per_side) {
      continue;
    }
    const int score = runs[k].length() + runs[k + 1].length();
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(k);
    }
  }
  if (best < 0) return std::nullopt;

  const double t_before = pixel_events[runs[best].end - 1].t_s;
  const double t_after = pixel_events[runs[best + 1].begin].t_s;
  return 0.5 * (t_before + t_after);
}

SparseDepth estimate_sparse_depth(const EventStream& stream, const ReversalConfig& cfg) {
  cfg.validate();
  stream.sweep.validate();
  const int h = stream.height;
  const int w = stream.width;

  std::vector<std::vector<Event>> per_pixel(static_cast<size_t>(h) * w);
  for (const Event& e : stream.events) {
    per_pixel[static_cast<size_t>(e.y) * w + e.x].push_back(e);
  }

  SparseDepth out;
  out.depth_map = NdArray({h, w});
  out.mask = NdArray({h, w});
  parallel_chunks(h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto& events = per_pixel[static_cast<size_t>(y) * w + x];
        if (const auto t_star = detect_reversal_time(events, cfg)) {
          out.depth_map.at2(y, x) = time_to_focal_distance(stream.sweep, *t_star);
          out.mask.at2(y, x) = 1.0;
        }
      }
    }
  });
  return out;
}

}  // namespace efs
