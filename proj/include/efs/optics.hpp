#pragma once

#include <stdexcept>
#include <vector>

#include "efs/event_stream.hpp"
#include "efs/image.hpp"

namespace efs {

struct OpticsError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LensConfig {
  double focal_length_m = 0.05;  // F
  double f_number = 8.0;         // f
  double pixel_pitch_m = 2e-6;
  double k_sigma = 0.5;          // PSF width per unit CoC diameter

  void validate() const;
};

// All-in-focus luminance plus per-pixel metric depth.
struct Scene {
  Image aif_image;  // values in [0, 1]
  Image depth_map;  // meters, strictly positive

  int height() const { return aif_image.height; }
  int width() const { return aif_image.width; }
  void validate() const;
};

// One rendered frame of a focal sweep.
struct LuminanceImage {
  Image values;
  double timestamp_s = 0.0;
  double focal_distance_m = 0.0;
};

// Truncated discrete Gaussian, normalized to sum 1. radius_px == 0 with a
// single unit weight is the impulse kernel.
struct PsfKernel {
  double sigma_px = 0.0;
  int radius_px = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major over offsets

  int side() const { return 2 * radius_px + 1; }
  bool is_impulse() const { return radius_px == 0; }
};

// Thin-lens Circle-of-Confusion diameter in meters:
//   s = |d_f - d_o| / d_o * F^2 / (f * (d_f - F)).
// Requires d_o > 0 and d_f > F.
double coc_diameter(const LensConfig& lens, double d_f_m, double d_o_m);

// Gaussian PSF for a CoC diameter: sigma_px = k_sigma * s / pixel_pitch.
// Degenerates into the impulse kernel when sigma_px < 0.25.
PsfKernel psf_from_coc(const LensConfig& lens, double coc_m);

// Gather-style spatially varying defocus blur: every output pixel convolves
// the AiF image with the kernel of its own depth. Mirror padding at borders.
LuminanceImage render_defocused(const Scene& scene, const LensConfig& lens, double d_f_m);

// One frame per sweep sample; timestamps and focal distances linear in the
// sample index, ordered by time.
std::vector<LuminanceImage> render_focal_sweep(const Scene& scene, const LensConfig& lens,
                                               const FocalSweep& sweep);

}  // namespace efs
