// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hieredit/error.hpp"

namespace hieredit {

// Interleaved RGB, row-major, values in [0, 1].
struct PixelImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<float> data;

  PixelImage() = default;
  PixelImage(std::size_t w, std::size_t h, float fill = 0.0f, std::size_t c = 3)
      : width(w), height(h), channels(c), data(w * h * c, fill) {
    if (w == 0 || h == 0) throw DimensionError("image dimensions must be positive");
  }

  std::size_t pixels() const { return width * height; }
  float& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  void clamp() {
    for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool same_extent(const PixelImage& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  friend bool operator==(const PixelImage&, const PixelImage&) = default;
};

struct PixelMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  PixelMask() = default;
  PixelMask(std::size_t w, std::size_t h, bool on = false) : width(w), height(h), bits(w * h, on ? 1 : 0) {}

  bool operator()(std::size_t x, std::size_t y) const { return bits[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y, bool on = true) { bits[y * width + x] = on ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool empty() const { return count() == 0; }
  double fraction() const { return static_cast<double>(count()) / static_cast<double>(bits.size()); }

  friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

inline void require_same_extent(const PixelImage& a, const PixelImage& b, const char* what) {
  if (!a.same_extent(b)) {
    throw DimensionError(std::string(what) + ": image extents " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + " differ");
  }
}

inline double mask_iou(const PixelMask& a, const PixelMask& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("mask_iou: extents differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace hieredit
