// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "hieredit/attention/mma.hpp"
#include "hieredit/region/integrate.hpp"
#include "hieredit/rope.hpp"

namespace hieredit {

// Reference/control image tokens and their placement.
struct ControlInput {
  LatentGrid grid;
  double rho_prime = 1.0;
  GridCoord delta;  // use default_reference_offset for a block right of the image
};

struct AssemblyOptions {
  bool integrated = true;  // one token per cell; false builds the naive 2N layout
  long window = 16;
  long halo = 1;
  const WindowActivation* activation = nullptr;  // nullptr: every window active
  double rho = 4.0;                              // anchor scaling ratio
  double max_extent = kDefaultMaxExtent;
};

// Token sequence [text, image, low-res anchors, control]. Non-text rows keep
// their raw patch content; the model projects it at its input boundary.
struct AssembledSequence {
  enum Section { kText = 0, kImage = 1, kAnchor = 2, kControl = 3 };

  std::vector<std::int32_t> text_ids;
  Tensor content;  // [n x patch_dim], text rows zero
  TokenLayout layout;
  std::vector<GridCoord> coords;
  AttentionPlan plan;
  std::array<std::size_t, 5> offsets{};  // section starts, then the total length
  std::vector<std::uint32_t> noisy_rows;   // sequence rows of live Noisy tokens, ascending cell
  std::vector<std::uint32_t> noisy_cells;
  std::size_t grid_rows = 0, grid_cols = 0;
  bool integrated = true;

  std::size_t size() const { return layout.size(); }
  std::size_t section_size(Section s) const { return offsets[s + 1] - offsets[s]; }
  bool is_text(std::size_t i) const { return i < offsets[kImage]; }
};

inline AssembledSequence assemble_sequence(const std::vector<std::int32_t>& text_ids, const IntegratedTokens& image,
                                           const LatentGrid* anchors, const ControlInput* control,
                                           const AssemblyOptions& opts = {}) {
  AssembledSequence seq;
  seq.integrated = opts.integrated;
  seq.grid_rows = image.rows;
  seq.grid_cols = image.cols;
  seq.text_ids = text_ids;
  const std::size_t n_img = image.size(), td = image.tokens.cols();
  if (anchors != nullptr && anchors->token_dim() != td) throw DimensionError("anchor token width differs from image");
  if (control != nullptr && control->grid.token_dim() != td) {
    throw DimensionError("control token width differs from image");
  }
  const std::size_t n_text = text_ids.size();
  const std::size_t n_image_rows = opts.integrated ? n_img : 2 * n_img;
  const std::size_t n_anchor = anchors ? anchors->count() : 0;
  const std::size_t n_control = control ? control->grid.count() : 0;
  seq.offsets = {0, n_text, n_text + n_image_rows, n_text + n_image_rows + n_anchor,
                 n_text + n_image_rows + n_anchor + n_control};
  const std::size_t n = seq.offsets[4];

  std::vector<float> data(n * td, 0.0f);
  auto& lay = seq.layout;
  lay.roles.reserve(n);
  lay.cell.reserve(n);
  lay.inert.assign(n, 0);
  seq.coords.reserve(n);
  for (std::size_t i = 0; i < n_text; ++i) {
    lay.roles.push_back(TokenRole::Text);
    lay.cell.push_back(-1);
    seq.coords.push_back({0.0, 0.0});
  }
  auto image_coord = [&](std::size_t cell) {
    return GridCoord{static_cast<double>(cell / image.cols), static_cast<double>(cell % image.cols)};
  };
  auto put = [&](std::size_t row, const float* src) { std::copy_n(src, td, data.data() + row * td); };

  if (opts.integrated) {
    for (std::size_t i = 0; i < n_img; ++i) {
      const std::size_t row = lay.roles.size();
      lay.roles.push_back(image.roles[i]);
      lay.cell.push_back(static_cast<std::int32_t>(image.cell[i]));
      seq.coords.push_back(image_coord(image.cell[i]));
      put(row, image.tokens.row_ptr(i));
    }
  } else {
    // Condition copy of the whole grid, then a noisy copy of the whole grid.
    // Duplicates that would not exist in the integrated form are inert.
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t i = 0; i < n_img; ++i) {
        const std::size_t row = lay.roles.size();
        const bool masked = image.roles[i] == TokenRole::Noisy;
        lay.roles.push_back(pass == 0 ? TokenRole::Condition : TokenRole::Noisy);
        lay.cell.push_back(static_cast<std::int32_t>(image.cell[i]));
        lay.inert[row] = pass == 0 ? masked : !masked;
        seq.coords.push_back(image_coord(image.cell[i]));
        put(row, image.tokens.row_ptr(i));
      }
  }
  for (std::size_t i = seq.offsets[1]; i < seq.offsets[2]; ++i) {
    if (lay.roles[i] == TokenRole::Noisy && !lay.inert[i]) seq.noisy_rows.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(seq.noisy_rows.begin(), seq.noisy_rows.end(),
            [&](std::uint32_t a, std::uint32_t b) { return lay.cell[a] < lay.cell[b]; });
  for (auto r : seq.noisy_rows) seq.noisy_cells.push_back(static_cast<std::uint32_t>(lay.cell[r]));

  std::set<std::pair<double, double>> occupied;
  for (std::size_t i = seq.offsets[1]; i < seq.offsets[2]; ++i) occupied.insert({seq.coords[i].row, seq.coords[i].col});
  if (anchors) {
    for (std::size_t i = 0; i < n_anchor; ++i) {
      const std::size_t row = lay.roles.size();
      lay.roles.push_back(TokenRole::LowResAnchor);
      lay.cell.push_back(-1);
      const GridCoord c = anchor_coords({static_cast<double>(i / anchors->cols), static_cast<double>(i % anchors->cols)},
                                        opts.rho);
      if (c.row >= opts.max_extent || c.col >= opts.max_extent) throw PlacementError("anchor outside the grid extent");
      seq.coords.push_back(c);
      occupied.insert({c.row, c.col});
      put(row, anchors->tokens.row_ptr(i));
    }
  }
  if (control) {
    for (std::size_t i = 0; i < n_control; ++i) {
      const std::size_t row = lay.roles.size();
      lay.roles.push_back(TokenRole::Control);
      lay.cell.push_back(-1);
      const GridCoord c = reference_coords(
          {static_cast<double>(i / control->grid.cols), static_cast<double>(i % control->grid.cols)},
          control->rho_prime, control->delta, opts.max_extent);
      if (occupied.count({c.row, c.col})) {
        throw PlacementError("control token at (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                             ") collides with an image or anchor token");
      }
      seq.coords.push_back(c);
      put(row, control->grid.tokens.row_ptr(i));
    }
  }
  seq.content = Tensor({n, td}, std::move(data));
  seq.plan = build_window_plan(image.rows, image.cols, opts.window, opts.halo, opts.activation);
  return seq;
}

// Sequence rows whose content belongs to static roles, with the inputs the
// static stream depends on folded into one hash.
inline std::uint64_t static_fingerprint(const AssembledSequence& seq) {
  std::uint64_t h = 1469598103934665603ull;
  const std::size_t td = seq.content.cols();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!role_is_static(seq.layout.roles[i])) continue;
    h = fingerprint(std::span<const float>(seq.content.row_ptr(i), td), h);
    const float pos[3] = {static_cast<float>(seq.coords[i].row), static_cast<float>(seq.coords[i].col),
                          static_cast<float>(seq.layout.cell[i])};
    h = fingerprint(pos, h);
  }
  std::vector<float> act(seq.plan.active.begin(), seq.plan.active.end());
  return fingerprint(act, h);
}

}  // namespace hieredit
