#include "efs/optics.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>

#include "efs/parallel.hpp"

namespace efs {

namespace {
constexpr double kImpulseSigmaPx = 0.25;

// Symmetric border reflection; folds until the index lands in [0, n).
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

uint32_t float_bits(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  return bits;
}
}  // namespace

void LensConfig::validate() const {
  if (!(focal_length_m > 0.0)) throw OpticsError("LensConfig: focal_length_m must be positive");
  if (!(f_number > 0.0)) throw OpticsError("LensConfig: f_number must be positive");
  if (!(pixel_pitch_m > 0.0)) throw OpticsError("LensConfig: pixel_pitch_m must be positive");
  if (!(k_sigma > 0.0)) throw OpticsError("LensConfig: k_sigma must be positive");
}

void Scene::validate() const {
  if (!aif_image.same_shape(depth_map)) {
    throw OpticsError("Scene: aif_image and depth_map dimensions differ");
  }
  if (aif_image.height <= 0 || aif_image.width <= 0) {
    throw OpticsError("Scene: empty image");
  }
  for (float d : depth_map.data) {
    if (!(d > 0.0f)) throw OpticsError("Scene: all depths must be strictly positive");
  }
}

double coc_diameter(const LensConfig& lens, double d_f_m, double d_o_m) {
  lens.validate();
  if (!(d_o_m > 0.0)) {
    throw OpticsError("coc_diameter: object distance must be positive, got " +
                      std::to_string(d_o_m));
  }
  if (!(d_f_m > lens.focal_length_m)) {
    throw OpticsError("coc_diameter: focal distance must exceed the focal length");
  }
  const double f2 = lens.focal_length_m * lens.focal_length_m;
  return std::abs(d_f_m - d_o_m) / d_o_m * f2 / (lens.f_number * (d_f_m - lens.focal_length_m));
}

PsfKernel psf_from_coc(const LensConfig& lens, double coc_m) {
  lens.validate();
  if (coc_m < 0.0) throw OpticsError("psf_from_coc: CoC diameter must be nonnegative");
  PsfKernel kernel;
  kernel.sigma_px = lens.k_sigma * coc_m / lens.pixel_pitch_m;
  if (kernel.sigma_px < kImpulseSigmaPx) {
    kernel.radius_px = 0;
    kernel.weights = {1.0};
    return kernel;
  }
  kernel.radius_px = static_cast<int>(std::ceil(3.0 * kernel.sigma_px));
  const int side = kernel.side();
  kernel.weights.resize(static_cast<size_t>(side) * side);
  const double inv_two_sigma2 = 1.0 / (2.0 * kernel.sigma_px * kernel.sigma_px);
  double total = 0.0;
  for (int dy = -kernel.radius_px; dy <= kernel.radius_px; ++dy) {
    for (int dx = -kernel.radius_px; dx <= kernel.radius_px; ++dx) {
      const double w = std::exp(-(dy * double(dy) + dx * double(dx)) * inv_two_sigma2);
      kernel.weights[static_cast<size_t>(dy + kernel.radius_px) * side + (dx + kernel.radius_px)] = w;
      total += w;
    }
  }
  for (double& w : kernel.weights) w /= total;
  return kernel;
}

LuminanceImage render_defocused(const Scene& scene, const LensConfig& lens, double d_f_m) {
  scene.validate();
  const int h = scene.height();
  const int w = scene.width();

  // Scenes are piecewise constant in depth, so kernels repeat heavily.
  std::unordered_map<uint32_t, PsfKernel> kernels;
  for (float d : scene.depth_map.data) {
    const uint32_t key = float_bits(d);
    if (kernels.find(key) == kernels.end()) {
      kernels.emplace(key, psf_from_coc(lens, coc_diameter(lens, d_f_m, d)));
    }
  }

  LuminanceImage out;
  out.values = Image(h, w);
  out.focal_distance_m = d_f_m;
  parallel_chunks(h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const PsfKernel& kernel = kernels.at(float_bits(scene.depth_map.at(y, x)));
        if (kernel.is_impulse()) {
          out.values.at(y, x) = scene.aif_image.at(y, x);
          continue;
        }
        const int r = kernel.radius_px;
        const int side = kernel.side();
        double acc = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const int sy = reflect(y - dy, h);
          const double* wrow = kernel.weights.data() + static_cast<size_t>(dy + r) * side;
          for (int dx = -r; dx <= r; ++dx) {
            acc += wrow[dx + r] * scene.aif_image.at(sy, reflect(x - dx, w));
          }
        }
        out.values.at(y, x) = static_cast<float>(acc);
      }
    }
  });
  return out;
}

std::vector<LuminanceImage> render_focal_sweep(const Scene& scene, const LensConfig& lens,
                                               const FocalSweep& sweep) {
  sweep.validate();
  scene.validate();
  std::vector<LuminanceImage> frames;
  frames.reserve(sweep.num_samples);
  const int n = sweep.num_samples;
  for (int k = 0; k < n; ++k) {
    const double u = static_cast<double>(k) / (n - 1);
    const double d_f = sweep.d_f_start_m + u * (sweep.d_f_end_m - sweep.d_f_start_m);
    LuminanceImage frame = render_defocused(scene, lens, d_f);
    frame.timestamp_s = sweep.t_start_s + u * sweep.duration_s;
    frame.focal_distance_m = d_f;
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace efs
