#include "efs/encodings.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace efs {

void EncodingConfig::validate() const {
  if (num_bins < 2) throw std::invalid_argument("EncodingConfig: num_bins must be >= 2");
  if (height <= 0 || width <= 0) throw std::invalid_argument("EncodingConfig: empty sensor size");
}

namespace {

void check_dims(const EventStream& stream, const EncodingConfig& cfg) {
  cfg.validate();
  if (stream.width != cfg.width || stream.height != cfg.height) {
    throw std::invalid_argument("encoding: stream dimensions do not match config");
  }
}

int polarity_channel(int8_t p) { return p > 0 ? 0 : 1; }

}  // namespace

VoxelGrid build_voxel_grid(const EventStream& stream, const EncodingConfig& cfg) {
  check_dims(stream, cfg);
  if (stream.events.empty()) {
    VoxelGrid grid;
    grid.values = NdArray({cfg.num_bins, 2, cfg.height, cfg.width});
    return grid;
  }
  return build_voxel_grid_spanned(stream, cfg, stream.events.front().t_s,
                                  stream.events.back().t_s);
}

VoxelGrid build_voxel_grid_spanned(const EventStream& stream, const EncodingConfig& cfg,
                                   double t_first, double t_last) {
  check_dims(stream, cfg);
  const int n = cfg.num_bins;
  VoxelGrid grid;
  grid.values = NdArray({n, 2, cfg.height, cfg.width});
  const double span = t_last - t_first;
  grid.degenerate_span = span == 0.0 && stream.events.size() > 1;

  for (const Event& e : stream.events) {
    const int ch = polarity_channel(e.polarity);
    if (span <= 0.0) {
      grid.values.at4(0, ch, e.y, e.x) += 1.0;
      continue;
    }
    // Scaled time in [0, N-1]; the event splits between the two enclosing
    // bins. w_hi is defined as 1 - w_lo so the pair sums to exactly 1.
    const double scaled = (n - 1) * ((e.t_s - t_first) / span);
    int lo = static_cast<int>(std::floor(scaled));
    lo = std::max(0, std::min(lo, n - 2));
    const double frac = scaled - lo;
    const double w_lo = 1.0 - frac;
    const double w_hi = 1.0 - w_lo;
    grid.values.at4(lo, ch, e.y, e.x) += w_lo;
    grid.values.at4(lo + 1, ch, e.y, e.x) += w_hi;
  }
  return grid;
}

DepthSurface build_depth_surface(const EventStream& stream, const EncodingConfig& cfg) {
  check_dims(stream, cfg);
  if (stream.events.empty()) {
    DepthSurface surface;
    surface.values = NdArray({cfg.num_bins, 2, cfg.height, cfg.width});
    return surface;
  }
  return build_depth_surface_spanned(stream, cfg, stream.events.front().t_s,
                                     stream.events.back().t_s);
}

DepthSurface build_depth_surface_spanned(const EventStream& stream, const EncodingConfig& cfg,
                                         double t_first, double t_last) {
  check_dims(stream, cfg);
  stream.sweep.validate();
  const int n = cfg.num_bins;
  DepthSurface surface;
  surface.values = NdArray({n, 2, cfg.height, cfg.width});
  if (stream.events.empty()) return surface;

  const double span = t_last - t_first;
  constexpr double kNoEvent = -std::numeric_limits<double>::infinity();
  NdArray latest({n, 2, cfg.height, cfg.width}, kNoEvent);
  for (const Event& e : stream.events) {
    // Half-open bins [t_i, t_{i+1}) over [t_first, t_last], last bin closed.
    int bin = 0;
    if (span > 0.0) {
      bin = static_cast<int>(std::floor((e.t_s - t_first) / span * n));
      bin = std::max(0, std::min(bin, n - 1));
    }
    double& cell = latest.at4(bin, polarity_channel(e.polarity), e.y, e.x);
    cell = std::max(cell, e.t_s);
  }
  for (size_t i = 0; i < latest.data.size(); ++i) {
    surface.values.data[i] =
        latest.data[i] == kNoEvent ? 0.0 : time_to_focal_distance(stream.sweep, latest.data[i]);
  }
  return surface;
}

BinaryMask build_mask(const EventStream& stream, const EncodingConfig& cfg) {
  check_dims(stream, cfg);
  BinaryMask mask;
  mask.values = NdArray({cfg.height, cfg.width});
  for (const Event& e : stream.events) mask.values.at2(e.y, e.x) = 1.0;
  return mask;
}

}  // namespace efs
