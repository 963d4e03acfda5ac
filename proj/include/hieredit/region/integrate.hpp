// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <deque>
#include <limits>

#include "hieredit/attention/plan.hpp"
#include "hieredit/region/image.hpp"
#include "hieredit/region/patchify.hpp"

namespace hieredit {

// One token per grid cell: source content where the mask is clear, noisy
// content where it is set.
struct IntegratedTokens {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor tokens;                   // [N x token_dim]
  std::vector<TokenRole> roles;    // Condition or Noisy
  std::vector<std::uint32_t> cell; // grid cell of each token (identity order)
  std::vector<std::uint32_t> noisy;  // cells of the Noisy tokens, ascending

  std::size_t size() const { return roles.size(); }
};

inline IntegratedTokens integrate_tokens(const LatentGrid& source, const Tensor& noisy, const PixelMask& tokens) {
  if (tokens.width != source.cols || tokens.height != source.rows) {
    throw DimensionError("integrate_tokens: mask grid " + std::to_string(tokens.width) + "x" +
                         std::to_string(tokens.height) + " vs latent grid " + std::to_string(source.cols) + "x" +
                         std::to_string(source.rows));
  }
  if (noisy.shape() != source.tokens.shape()) throw DimensionError("integrate_tokens: noisy latent shape");
  IntegratedTokens out;
  out.rows = source.rows;
  out.cols = source.cols;
  const std::size_t n = source.count(), td = source.token_dim();
  std::vector<float> data(n * td);
  for (std::size_t i = 0; i < n; ++i) {
    const bool masked = tokens.bits[i] != 0;
    const float* src = masked ? noisy.row_ptr(i) : source.tokens.row_ptr(i);
    std::copy_n(src, td, data.data() + i * td);
    out.roles.push_back(masked ? TokenRole::Noisy : TokenRole::Condition);
    out.cell.push_back(static_cast<std::uint32_t>(i));
    if (masked) out.noisy.push_back(static_cast<std::uint32_t>(i));
  }
  out.tokens = Tensor({n, td}, std::move(data));
  return out;
}

// Out-of-mask pixels come from `source` bitwise. With feather > 0, masked
// pixels closer than `feather` to the mask border blend linearly toward the
// source.
inline PixelImage composite(const PixelImage& source, const PixelImage& denoised, const PixelMask& mask,
                            std::size_t feather = 0) {
  require_same_extent(source, denoised, "composite");
  if (mask.width != source.width || mask.height != source.height) throw DimensionError("composite: mask extent");
  PixelImage out = source;
  std::vector<std::size_t> dist;
  if (feather > 0) {
    // Chessboard distance from each masked pixel to the nearest clear pixel.
    const std::size_t inf = std::numeric_limits<std::size_t>::max();
    dist.assign(mask.bits.size(), inf);
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < mask.bits.size(); ++i)
      if (!mask.bits[i]) {
        dist[i] = 0;
        q.push_back(i);
      }
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop_front();
      const long x = static_cast<long>(i % mask.width), y = static_cast<long>(i / mask.width);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(mask.width) || yy >= static_cast<long>(mask.height)) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * mask.width + static_cast<std::size_t>(xx);
          if (dist[j] == inf) {
            dist[j] = dist[i] + 1;
            q.push_back(j);
          }
        }
    }
  }
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    double a = 1.0;
    if (feather > 0 && dist[i] <= feather) a = static_cast<double>(dist[i]) / static_cast<double>(feather + 1);
    for (std::size_t c = 0; c < source.channels; ++c) {
      const std::size_t k = i * source.channels + c;
      out.data[k] = a == 1.0 ? denoised.data[k] : static_cast<float>((1 - a) * source.data[k] + a * denoised.data[k]);
    }
  }
  return out;
}

}  // namespace hieredit
