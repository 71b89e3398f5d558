#pragma once

#include "efs/event_stream.hpp"
#include "efs/io.hpp"

namespace efs {

struct EncodingConfig {
  int num_bins = 8;  // N
  int height = 0;
  int width = 0;

  void validate() const;
};

// N x 2 x H x W count tensor; channel 0 holds positive polarity, channel 1
// negative. Each event spreads linear-kernel weight over at most two
// adjacent time bins.
struct VoxelGrid {
  NdArray values;
  // Set when more than one event shares a single timestamp span, which sends
  // all mass to bin 0.
  bool degenerate_span = false;
};

// N x 2 x H x W tensor of metric focal distances: per bin/polarity/pixel the
// most recent event timestamp mapped through the sweep's time->distance
// line. 0 marks cells without an event.
struct DepthSurface {
  NdArray values;
};

// H x W in {0,1}; 1 exactly at pixels with at least one event.
struct BinaryMask {
  NdArray values;
};

VoxelGrid build_voxel_grid(const EventStream& stream, const EncodingConfig& cfg);
DepthSurface build_depth_surface(const EventStream& stream, const EncodingConfig& cfg);
BinaryMask build_mask(const EventStream& stream, const EncodingConfig& cfg);

// Variants with a pinned global time span, for encoding sub-streams of one
// recording against shared extremes.
VoxelGrid build_voxel_grid_spanned(const EventStream& stream, const EncodingConfig& cfg,
                                   double t_first, double t_last);
DepthSurface build_depth_surface_spanned(const EventStream& stream, const EncodingConfig& cfg,
                                         double t_first, double t_last);

}  // namespace efs
