// SPDX-License-Identifier: Apache-2.0
//
// Lossless space-to-channel rearrangement between images and token grids.
// Token (r, c) holds the p x p block at pixel (c*p, r*p), laid out as
// (dy, dx, channel).

#pragma once

#include <string>

#include "hieredit/numerics/tensor.hpp"
#include "hieredit/region/image.hpp"

namespace hieredit {

struct LatentGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch = 1;
  std::size_t channels = 3;
  Tensor tokens;  // [rows*cols x patch*patch*channels]

  std::size_t count() const { return rows * cols; }
  std::size_t token_dim() const { return patch * patch * channels; }
};

inline LatentGrid patchify(const PixelImage& img, std::size_t p) {
  if (p == 0 || img.width % p != 0 || img.height % p != 0) {
    throw ResampleError("patch size " + std::to_string(p) + " does not divide " + std::to_string(img.width) + "x" +
                        std::to_string(img.height));
  }
  LatentGrid g{img.height / p, img.width / p, p, img.channels, Tensor()};
  const std::size_t td = g.token_dim();
  std::vector<float> data(g.count() * td);
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      float* t = data.data() + (r * g.cols + c) * td;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < img.channels; ++ch)
            *t++ = img.at(c * p + dx, r * p + dy, ch);
    }
  g.tokens = Tensor({g.count(), td}, std::move(data));
  return g;
}

inline PixelImage unpatchify(const LatentGrid& g) {
  if (g.tokens.rank() != 2 || g.tokens.rows() != g.count() || g.tokens.cols() != g.token_dim()) {
    throw DimensionError("unpatchify: token tensor " + shape_str(g.tokens.shape()) + " does not match grid");
  }
  const std::size_t p = g.patch, td = g.token_dim();
  PixelImage img(g.cols * p, g.rows * p, 0.0f, g.channels);
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      const float* t = g.tokens.ptr() + (r * g.cols + c) * td;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < g.channels; ++ch)
            img.at(c * p + dx, r * p + dy, ch) = *t++;
    }
  return img;
}

}  // namespace hieredit
