// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hieredit/region/image.hpp"

namespace hieredit {

// Box-filter average over factor x factor blocks.
inline PixelImage downsample(const PixelImage& img, std::size_t factor) {
  if (factor == 0 || img.width % factor != 0 || img.height % factor != 0) {
    throw ResampleError("downsample factor " + std::to_string(factor) + " does not divide " +
                        std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  PixelImage out(img.width / factor, img.height / factor, 0.0f, img.channels);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = static_cast<float>(s * inv);
      }
  return out;
}

// Bilinear interpolation with pixel centres aligned (half-pixel convention),
// edges clamped.
inline PixelImage bilinear_upsample(const PixelImage& img, std::size_t factor) {
  if (factor == 0) throw ResampleError("upsample factor must be positive");
  PixelImage out(img.width * factor, img.height * factor, 0.0f, img.channels);
  auto axis = [&](std::size_t i, std::size_t n, std::size_t& i0, std::size_t& i1, double& w) {
    double s = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, n - 1);
    w = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out.height; ++y) {
    std::size_t y0, y1;
    double wy;
    axis(y, img.height, y0, y1, wy);
    for (std::size_t x = 0; x < out.width; ++x) {
      std::size_t x0, x1;
      double wx;
      axis(x, img.width, x0, x1, wx);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
        const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

// Separable gaussian blur, radius ceil(3 sigma), edges clamped.
inline PixelImage gaussian_blur(const PixelImage& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i)
    total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (double& v : k) v /= total;
  auto pass = [&](const PixelImage& src, bool horizontal) {
    PixelImage dst(src.width, src.height, 0.0f, src.channels);
    const long w = static_cast<long>(src.width), h = static_cast<long>(src.height);
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        for (std::size_t c = 0; c < src.channels; ++c) {
          double s = 0.0;
          for (long i = -radius; i <= radius; ++i) {
            const long sx = horizontal ? std::clamp(x + i, 0L, w - 1) : x;
            const long sy = horizontal ? y : std::clamp(y + i, 0L, h - 1);
            s += k[static_cast<std::size_t>(i + radius)] *
                 src.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), c);
          }
          dst.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) = static_cast<float>(s);
        }
    return dst;
  };
  return pass(pass(img, true), false);
}

// Sum of squared discrete Laplacian responses (interior pixels).
inline double laplacian_energy(const PixelImage& img) {
  double e = 0.0;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double l = 4.0 * img.at(x, y, c) - img.at(x - 1, y, c) - img.at(x + 1, y, c) - img.at(x, y - 1, c) -
                         img.at(x, y + 1, c);
        e += l * l;
      }
  return e;
}

}  // namespace hieredit
