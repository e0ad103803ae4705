#pragma once

#include <cstddef>
#include <vector>

#include <epirefine/errors.hpp>

namespace epirefine {

// Row-major H x W x C raster, values nominally in [0,1].
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c),
                               data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

struct Mask {
  int height = 0, width = 0;
  std::vector<bool> data;

  Mask() = default;
  Mask(int h, int w, bool v = false)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, v) {}

  std::vector<bool>::reference at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  bool at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
};

inline std::size_t Mask::count() const {
  std::size_t n = 0;
  for (bool b : data) n += b;
  return n;
}

}  // namespace epirefine
