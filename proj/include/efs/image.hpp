#pragma once

#include <cstddef>
#include <vector>

namespace efs {

// Row-major H x W grid of single-precision values. Used for luminance
// images, depth maps and masks.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

  float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width;
  }
};

}  // namespace efs
