// SPDX-License-Identifier: Apache-2.0
//
// Procedural edit pairs: a textured background with a few flat shapes, one of
// which is recoloured, added or removed. Shapes sit on a cell grid equal to
// the proxy downsample factor, so the changed-pixel set is exactly
// representable at low resolution.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hieredit/numerics/rng.hpp"
#include "hieredit/region/resample.hpp"

namespace hieredit {

enum class EditKind : std::uint8_t { Recolor, Add, Remove };

inline const char* edit_kind_name(EditKind k) {
  switch (k) {
    case EditKind::Recolor: return "recolor";
    case EditKind::Add: return "add";
    case EditKind::Remove: return "remove";
  }
  return "?";
}

// Saturated colours. Any two differ by at least 0.35 in some channel, and each
// sits about 0.25 outside the grey background band in some channel.
inline constexpr std::array<std::array<float, 3>, 8> kPalette{{{0.90f, 0.10f, 0.10f},
                                                                {0.10f, 0.85f, 0.15f},
                                                                {0.10f, 0.20f, 0.95f},
                                                                {0.95f, 0.90f, 0.10f},
                                                                {0.90f, 0.15f, 0.90f},
                                                                {0.10f, 0.90f, 0.90f},
                                                                {0.98f, 0.55f, 0.05f},
                                                                {0.05f, 0.05f, 0.05f}}};

// Instruction vocabulary: ids 0..2 name the edit kind, 3.. the colour.
inline constexpr std::int32_t kColorTokenBase = 3;
inline constexpr std::size_t kInstructionVocab = kColorTokenBase + kPalette.size();

struct SyntheticFixture {
  PixelImage source;
  PixelImage target;
  PixelMask mask;  // exact changed-pixel set
  std::vector<std::int32_t> instruction;
  PixelImage proxy;  // downsampled target
  EditKind kind = EditKind::Recolor;
  double ratio_goal = 0.0;
};

struct SyntheticOptions {
  std::size_t size = 64;       // square images
  std::size_t cell = 4;        // shape grid, equals the proxy factor
  std::size_t proxy_factor = 4;
  double min_ratio = 0.10;     // target edit area fraction range
  double max_ratio = 0.75;
  std::size_t min_shapes = 2;  // shapes in the scene including the edited one
  std::size_t max_shapes = 5;
};

namespace detail {

struct CellShape {
  enum Kind { Rect, Ellipse, Cross } kind = Rect;
  long r0 = 0, c0 = 0, rows = 1, cols = 1;  // bounding box in cells
  std::size_t color = 0;

  bool covers(long r, long c) const {
    if (r < r0 || c < c0 || r >= r0 + rows || c >= c0 + cols) return false;
    const double y = (static_cast<double>(r - r0) + 0.5) / static_cast<double>(rows) - 0.5;
    const double x = (static_cast<double>(c - c0) + 0.5) / static_cast<double>(cols) - 0.5;
    switch (kind) {
      case Rect: return true;
      case Ellipse: return x * x + y * y <= 0.25;
      case Cross: return std::abs(x) <= 0.2 || std::abs(y) <= 0.2;
    }
    return false;
  }
};

inline PixelImage background(Rng& rng, std::size_t size) {
  PixelImage img(size, size);
  const double base = rng.uniform(0.40, 0.60);
  const double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);
  const double fx = rng.uniform(0.15, 0.45), fy = rng.uniform(0.15, 0.45), ph = rng.uniform(0.0, 6.283);
  const std::array<double, 3> tint{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = static_cast<double>(x) / static_cast<double>(size) - 0.5;
      const double v = static_cast<double>(y) / static_cast<double>(size) - 0.5;
      const double tex = 0.04 * std::sin(fx * static_cast<double>(x) + ph) * std::cos(fy * static_cast<double>(y));
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(x, y, c) = static_cast<float>(std::clamp(base + gx * u + gy * v + tex + tint[c], 0.35, 0.65));
      }
    }
  return img;
}

inline void draw(PixelImage& img, const CellShape& s, std::size_t cell) {
  const auto& col = kPalette[s.color];
  const long cells = static_cast<long>(img.width / cell);
  for (long r = std::max(0L, s.r0); r < std::min(cells, s.r0 + s.rows); ++r)
    for (long c = std::max(0L, s.c0); c < std::min(cells, s.c0 + s.cols); ++c) {
      if (!s.covers(r, c)) continue;
      for (std::size_t dy = 0; dy < cell; ++dy)
        for (std::size_t dx = 0; dx < cell; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch)
            img.at(static_cast<std::size_t>(c) * cell + dx, static_cast<std::size_t>(r) * cell + dy, ch) = col[ch];
    }
}

inline double coverage(const CellShape& s) {
  double n = 0;
  for (long r = s.r0; r < s.r0 + s.rows; ++r)
    for (long c = s.c0; c < s.c0 + s.cols; ++c) n += s.covers(r, c) ? 1 : 0;
  return n;
}

// Shape whose covered area is close to `area` cells.
inline CellShape shape_with_area(Rng& rng, long cells, double area) {
  CellShape s;
  const double u = rng.uniform();
  s.kind = u < 0.5 ? CellShape::Rect : (u < 0.8 ? CellShape::Ellipse : CellShape::Cross);
  const double fill = s.kind == CellShape::Rect ? 1.0 : (s.kind == CellShape::Ellipse ? 0.785 : 0.64);
  const double box = std::min(area / fill, static_cast<double>(cells * cells));
  const double aspect = rng.uniform(0.6, 1.6);
  long rows = std::clamp(static_cast<long>(std::lround(std::sqrt(box * aspect))), 2L, cells);
  long cols = std::clamp(static_cast<long>(std::lround(box / static_cast<double>(rows))), 2L, cells);
  if (static_cast<double>(rows * cols) < box && rows < cells) rows = std::min(cells, rows + 1);
  s.rows = rows;
  s.cols = cols;
  s.r0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(cells - rows + 1)));
  s.c0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(cells - cols + 1)));
  return s;
}

}  // namespace detail

inline PixelMask changed_pixels(const PixelImage& a, const PixelImage& b) {
  require_same_extent(a, b, "changed_pixels");
  PixelMask m(a.width, a.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i)
    for (std::size_t c = 0; c < a.channels; ++c)
      if (a.data[i * a.channels + c] != b.data[i * a.channels + c]) m.bits[i] = 1;
  return m;
}

// One fixture aiming at an edit covering `ratio` of the image.
inline SyntheticFixture synthetic_fixture(Rng& rng, const SyntheticOptions& o, double ratio, EditKind kind) {
  if (o.cell == 0 || o.size % o.cell != 0 || o.size % o.proxy_factor != 0) {
    throw ConfigError("synthetic: image size must be a multiple of the cell and proxy factor");
  }
  const long cells = static_cast<long>(o.size / o.cell);
  for (int attempt = 0;; ++attempt) {
    SyntheticFixture fx;
    fx.kind = kind;
    fx.ratio_goal = ratio;
    PixelImage bg = detail::background(rng, o.size);
    const std::size_t n_shapes = o.min_shapes + rng.below(o.max_shapes - o.min_shapes + 1);
    std::vector<detail::CellShape> others;
    for (std::size_t i = 0; i + 1 < n_shapes; ++i) {
      auto s = detail::shape_with_area(rng, cells, rng.uniform(0.02, 0.08) * static_cast<double>(cells * cells));
      s.color = rng.below(kPalette.size());
      others.push_back(s);
    }
    auto primary = detail::shape_with_area(rng, cells, ratio * static_cast<double>(cells * cells));
    primary.color = rng.below(kPalette.size());
    PixelImage under = bg;
    for (const auto& s : others) detail::draw(under, s, o.cell);
    std::size_t new_color = primary.color;
    switch (kind) {
      case EditKind::Recolor: {
        new_color = (primary.color + 1 + rng.below(kPalette.size() - 1)) % kPalette.size();
        fx.source = under;
        detail::draw(fx.source, primary, o.cell);
        fx.target = under;
        auto recol = primary;
        recol.color = new_color;
        detail::draw(fx.target, recol, o.cell);
        break;
      }
      case EditKind::Add:
        fx.source = under;
        fx.target = under;
        detail::draw(fx.target, primary, o.cell);
        break;
      case EditKind::Remove:
        fx.source = under;
        detail::draw(fx.source, primary, o.cell);
        fx.target = under;
        break;
    }
    fx.mask = changed_pixels(fx.source, fx.target);
    // Retry when the edit landed on identical colours and left almost nothing.
    if (fx.mask.fraction() < 0.5 * ratio && attempt < 20) continue;
    fx.instruction = {static_cast<std::int32_t>(kind), kColorTokenBase + static_cast<std::int32_t>(new_color)};
    fx.proxy = downsample(fx.target, o.proxy_factor);
    return fx;
  }
}

// `count` fixtures with edit ratios spread evenly over [min_ratio, max_ratio]
// and kinds cycling through recolor, add, remove.
inline std::vector<SyntheticFixture> synthetic_dataset(std::uint64_t seed, std::size_t count,
                                                       const SyntheticOptions& o = {}) {
  std::vector<SyntheticFixture> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.5;
    const double ratio = o.min_ratio + (o.max_ratio - o.min_ratio) * u;
    Rng local = rng.fork(i);
    out.push_back(synthetic_fixture(local, o, ratio, static_cast<EditKind>(i % 3)));
  }
  return out;
}

// Low-resolution editor interface: (proxy input, instruction, control) -> edited proxy.
using ProxyEditor =
    std::function<PixelImage(const PixelImage& lowres, const std::vector<std::int32_t>& instruction,
                             const PixelImage* control)>;

// Returns the downsampled ground-truth target, plus optional gaussian
// corruption of standard deviation `sigma` (clamped to [0, 1]).
inline ProxyEditor synthetic_proxy_editor(const PixelImage& target, std::size_t factor, double sigma = 0.0,
                                          std::uint64_t seed = 0) {
  const PixelImage clean = downsample(target, factor);
  return [clean, sigma, seed](const PixelImage& lowres, const std::vector<std::int32_t>&, const PixelImage*) {
    if (!lowres.same_extent(clean)) throw DimensionError("synthetic proxy editor: input extent differs from target");
    if (sigma == 0.0) return clean;
    PixelImage out = clean;
    Rng rng(seed);
    for (float& v : out.data) v = static_cast<float>(v + sigma * rng.normal());
    out.clamp();
    return out;
  };
}

}  // namespace hieredit
