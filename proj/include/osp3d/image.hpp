#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "osp3d/error.hpp"

namespace osp3d {

// Interleaved H x W x C raster. Row-major, channel fastest.
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  T* pixel(int x, int y) { return data.data() + index(x, y); }
  const T* pixel(int x, int y) const { return data.data() + index(x, y); }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

using ImageD = Image<double>;
using Mask = Image<std::uint8_t>;       // binary, 1 channel, values {0,1}
using IdMap = Image<std::uint16_t>;     // instance ids, 0 = unlabeled

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  require(a.width == b.width && a.height == b.height && a.channels == b.channels,
          ErrorCode::kContractViolation, what);
}

}  // namespace osp3d
