// SPDX-License-Identifier: Apache-2.0
//
// 2D rotary position embeddings and the coordinate maps that place low-res
// anchor tokens and reference/control tokens on the high-res token grid.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hieredit/numerics/ops.hpp"

namespace hieredit {

// Token-grid position. Fractional values appear after non-integer scaling.
struct GridCoord {
  double row = 0.0;
  double col = 0.0;

  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

inline constexpr double kDefaultMaxExtent = 65536.0;

struct RopeParams {
  std::size_t head_dim = 32;
  double base_frequency = 10000.0;
  // Leading dims of each head rotate with the row coordinate, the rest with
  // the column. Zero selects an even split.
  std::size_t row_dims = 0;

  std::size_t rows_part() const { return row_dims == 0 ? head_dim / 2 : row_dims; }
  std::size_t cols_part() const { return head_dim - rows_part(); }

  void validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) {
      throw ConfigError("rope head_dim must be even and positive, got " + std::to_string(head_dim));
    }
    if (rows_part() > head_dim || rows_part() % 2 != 0 || cols_part() % 2 != 0) {
      throw ConfigError("rope axis split must give two even parts summing to head_dim");
    }
    if (!(base_frequency > 0.0)) throw ConfigError("rope base_frequency must be positive");
  }
};

namespace detail {

// Per-pair rotation angles for one coordinate, head_dim / 2 entries.
inline void rope_angles(const GridCoord& c, const RopeParams& p, std::vector<double>& angles) {
  angles.clear();
  auto axis = [&](double pos, std::size_t dims) {
    for (std::size_t k = 0; k < dims / 2; ++k) {
      const double freq = std::pow(p.base_frequency, -2.0 * static_cast<double>(k) / static_cast<double>(dims));
      angles.push_back(pos * freq);
    }
  };
  axis(c.row, p.rows_part());
  axis(c.col, p.cols_part());
}

// Rotates adjacent pairs of every head of `row` by `sign * angles`.
inline void rope_row(const float* in, float* out, std::size_t heads, std::size_t head_dim,
                     std::span<const double> angles, double sign) {
  for (std::size_t h = 0; h < heads; ++h) {
    const float* x = in + h * head_dim;
    float* y = out + h * head_dim;
    for (std::size_t k = 0; k < head_dim / 2; ++k) {
      const double a = sign * angles[k];
      const double c = std::cos(a), s = std::sin(a);
      const double x0 = x[2 * k], x1 = x[2 * k + 1];
      y[2 * k] = static_cast<float>(x0 * c - x1 * s);
      y[2 * k + 1] = static_cast<float>(x0 * s + x1 * c);
    }
  }
}

}  // namespace detail

// Rotates each token (row) by its coordinate. `tokens` is [n x heads*head_dim]
// and every head uses the same rotation.
inline Tensor rope_rotate(const Tensor& tokens, std::span<const GridCoord> coords,
                          const RopeParams& params, std::size_t heads = 1) {
  params.validate();
  detail::require_matrix(tokens, "rope_rotate");
  const std::size_t n = tokens.rows(), width = tokens.cols();
  if (width != heads * params.head_dim) {
    throw DimensionError("rope_rotate: token width " + std::to_string(width) + " vs heads*head_dim " +
                         std::to_string(heads * params.head_dim));
  }
  if (coords.size() != n) throw DimensionError("rope_rotate: coordinate count vs tokens");
  Tensor out({n, width});
  std::vector<double> angles;
  for (std::size_t i = 0; i < n; ++i) {
    detail::rope_angles(coords[i], params, angles);
    detail::rope_row(tokens.row_ptr(i), out.mutable_ptr() + i * width, heads, params.head_dim, angles, 1.0);
  }
  detail::check_finite(out, "rope_rotate");
  if (detail::recording({&tokens})) {
    detail::record(out, [tn = tokens.node(), on = out.node(), c = std::vector<GridCoord>(coords.begin(), coords.end()),
                         params, heads, n, width] {
      auto g = detail::out_grad(on);
      std::vector<float> d(n * width);
      std::vector<double> angles;
      for (std::size_t i = 0; i < n; ++i) {
        detail::rope_angles(c[i], params, angles);
        detail::rope_row(g.data() + i * width, d.data() + i * width, heads, params.head_dim, angles, -1.0);
      }
      detail::accumulate(tn, d);
    });
  }
  return out;
}

// Low-res anchor position on the high-res grid: both axes scaled by rho.
inline GridCoord anchor_coords(const GridCoord& lowres, double rho) {
  if (!(rho > 0.0)) throw ConfigError("anchor scaling ratio must be positive");
  return {lowres.row * rho, lowres.col * rho};
}

// Reference/control token position: offset by delta, then scale by rho_prime.
inline GridCoord reference_coords(const GridCoord& coord, double rho_prime, const GridCoord& delta,
                                  double max_extent = kDefaultMaxExtent) {
  if (!(rho_prime > 0.0)) throw ConfigError("reference size ratio must be positive");
  const GridCoord out{rho_prime * (coord.row + delta.row), rho_prime * (coord.col + delta.col)};
  if (out.row < 0.0 || out.col < 0.0 || out.row >= max_extent || out.col >= max_extent) {
    throw PlacementError("reference coordinate (" + std::to_string(out.row) + ", " + std::to_string(out.col) +
                         ") outside the grid extent");
  }
  return out;
}

// Offset that puts a reference block strictly right of an image that is
// `grid_cols` tokens wide, whatever rho_prime is.
inline GridCoord default_reference_offset(std::size_t grid_cols, double rho_prime) {
  return {0.0, std::ceil(static_cast<double>(grid_cols) / rho_prime)};
}

}  // namespace hieredit
