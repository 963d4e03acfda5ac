// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "hieredit/attention/plan.hpp"
#include "hieredit/region/image.hpp"

namespace hieredit {

enum class MaskProvenance { User, Diff, Union };

struct RefinedMask {
  PixelMask mask;     // at the high-res extent
  PixelMask lowres;   // diff mask before upscaling
  MaskProvenance provenance = MaskProvenance::Diff;
};

struct MaskParams {
  double tau = 0.05;             // per-pixel max-channel difference threshold
  std::size_t dilation = 0;      // low-res pixels, square structuring element
  std::size_t min_component = 4; // 4-connected diff components smaller than this are dropped
};

// Max over channels of |a - b| per pixel.
inline std::vector<float> max_channel_diff(const PixelImage& a, const PixelImage& b) {
  require_same_extent(a, b, "max_channel_diff");
  std::vector<float> d(a.pixels(), 0.0f);
  for (std::size_t i = 0; i < a.pixels(); ++i)
    for (std::size_t c = 0; c < a.channels; ++c)
      d[i] = std::max(d[i], std::abs(a.data[i * a.channels + c] - b.data[i * a.channels + c]));
  return d;
}

inline PixelMask remove_small_components(const PixelMask& m, std::size_t min_size) {
  if (min_size <= 1) return m;
  PixelMask out = m;
  std::vector<std::uint8_t> seen(m.bits.size(), 0);
  std::vector<std::size_t> stack, comp;
  for (std::size_t s = 0; s < m.bits.size(); ++s) {
    if (!m.bits[s] || seen[s]) continue;
    comp.clear();
    stack.assign(1, s);
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const std::size_t x = i % m.width, y = i / m.width;
      auto visit = [&](std::size_t j) {
        if (m.bits[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < m.width) visit(i + 1);
      if (y > 0) visit(i - m.width);
      if (y + 1 < m.height) visit(i + m.width);
    }
    if (comp.size() < min_size)
      for (auto i : comp) out.bits[i] = 0;
  }
  return out;
}

inline PixelMask dilate(const PixelMask& m, std::size_t radius) {
  if (radius == 0) return m;
  PixelMask out(m.width, m.height);
  const long r = static_cast<long>(radius), w = static_cast<long>(m.width), h = static_cast<long>(m.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      if (!m(static_cast<std::size_t>(x), static_cast<std::size_t>(y))) continue;
      for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r); ++yy)
        for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx)
          out.set(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy));
    }
  return out;
}

inline PixelMask upscale_nearest(const PixelMask& m, std::size_t factor) {
  PixelMask out(m.width * factor, m.height * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.bits[y * out.width + x] = m(x / factor, y / factor) ? 1 : 0;
  return out;
}

inline PixelMask mask_union(const PixelMask& a, const PixelMask& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("mask_union: extents differ");
  PixelMask out = a;
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] || b.bits[i]) ? 1 : 0;
  return out;
}

// Pixel-level comparison of the proxy before and after editing, upscaled by
// `factor` to the high-res extent and merged with an optional user mask.
inline RefinedMask refine_mask(const PixelImage& lowres, const PixelImage& lowres_edited, const MaskParams& params,
                               std::size_t factor = 1, const PixelMask* user = nullptr) {
  const auto diff = max_channel_diff(lowres, lowres_edited);
  PixelMask raw(lowres.width, lowres.height);
  for (std::size_t i = 0; i < diff.size(); ++i) raw.bits[i] = diff[i] > params.tau ? 1 : 0;
  RefinedMask out;
  out.lowres = dilate(remove_small_components(raw, params.min_component), params.dilation);
  out.mask = upscale_nearest(out.lowres, std::max<std::size_t>(1, factor));
  if (user != nullptr) {
    out.mask = mask_union(out.mask, *user);
    out.provenance = MaskProvenance::Union;
  }
  return out;
}

// Half-open pixel rectangle.
struct Bbox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  friend bool operator==(const Bbox&, const Bbox&) = default;
};

inline std::optional<Bbox> mask_bbox(const PixelMask& m) {
  std::optional<Bbox> b;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m(x, y)) continue;
      if (!b) b = Bbox{x, y, x + 1, y + 1};
      b->x0 = std::min(b->x0, x);
      b->y0 = std::min(b->y0, y);
      b->x1 = std::max(b->x1, x + 1);
      b->y1 = std::max(b->y1, y + 1);
    }
  return b;
}

// Smallest rectangle aligned to `grid_px` containing the user box and the mask
// support. nullopt is the empty-edit signal.
inline std::optional<Bbox> refine_bbox(const std::optional<Bbox>& user, const PixelMask& refined, std::size_t grid_px) {
  if (grid_px == 0) throw ConfigError("refine_bbox: grid size must be positive");
  std::optional<Bbox> b = mask_bbox(refined);
  if (user && !user->empty()) {
    if (user->x1 > refined.width || user->y1 > refined.height) throw ContractError("user bbox outside the image");
    if (!b) {
      b = *user;
    } else {
      b = Bbox{std::min(b->x0, user->x0), std::min(b->y0, user->y0), std::max(b->x1, user->x1),
               std::max(b->y1, user->y1)};
    }
  }
  if (!b) return std::nullopt;
  b->x0 = b->x0 / grid_px * grid_px;
  b->y0 = b->y0 / grid_px * grid_px;
  b->x1 = std::min(refined.width, ceil_div(b->x1, grid_px) * grid_px);
  b->y1 = std::min(refined.height, ceil_div(b->y1, grid_px) * grid_px);
  return b;
}

// Token-resolution mask: a token is masked if any of its pixels is.
inline PixelMask token_mask(const PixelMask& m, std::size_t patch) {
  if (patch == 0 || m.width % patch != 0 || m.height % patch != 0) {
    throw ResampleError("token_mask: patch does not divide the mask extent");
  }
  PixelMask t(m.width / patch, m.height / patch);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m(x, y)) t.set(x / patch, y / patch);
  return t;
}

// Active windows over a token-resolution mask with windows of `window` tokens.
inline WindowActivation mask_to_windows(const PixelMask& tokens, std::size_t window) {
  if (window == 0) throw ConfigError("mask_to_windows: window must be positive");
  auto act = WindowActivation::all(ceil_div(tokens.height, window), ceil_div(tokens.width, window), false);
  for (std::size_t y = 0; y < tokens.height; ++y)
    for (std::size_t x = 0; x < tokens.width; ++x)
      if (tokens(x, y)) act.active[(y / window) * act.window_cols + x / window] = 1;
  return act;
}

inline WindowActivation mask_to_windows(const PixelMask& pixels, std::size_t patch, std::size_t window) {
  return mask_to_windows(token_mask(pixels, patch), window);
}

}  // namespace hieredit
