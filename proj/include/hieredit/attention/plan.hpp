// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "hieredit/error.hpp"

namespace hieredit {

enum class TokenRole : std::uint8_t { Text, Condition, Noisy, LowResAnchor, Control };

inline const char* role_name(TokenRole r) {
  switch (r) {
    case TokenRole::Text: return "text";
    case TokenRole::Condition: return "condition";
    case TokenRole::Noisy: return "noisy";
    case TokenRole::LowResAnchor: return "lowres_anchor";
    case TokenRole::Control: return "control";
  }
  return "?";
}

// Which keys a query may attend to. Noisy queries see everything, text sees
// text and noisy tokens, every other role sees only its own role.
constexpr bool role_allows(TokenRole query, TokenRole key) {
  switch (query) {
    case TokenRole::Noisy: return true;
    case TokenRole::Text: return key == TokenRole::Text || key == TokenRole::Noisy;
    default: return key == query;
  }
}

// Roles whose outputs never depend on noisy tokens, hence never change
// between denoising steps.
constexpr bool role_is_static(TokenRole r) {
  return r == TokenRole::Condition || r == TokenRole::LowResAnchor || r == TokenRole::Control;
}

// Active flag per window, row-major over the window grid.
struct WindowActivation {
  std::size_t window_rows = 0;
  std::size_t window_cols = 0;
  std::vector<std::uint8_t> active;

  static WindowActivation all(std::size_t rows, std::size_t cols, bool on = true) {
    return {rows, cols, std::vector<std::uint8_t>(rows * cols, on ? 1 : 0)};
  }

  std::size_t count() const { return static_cast<std::size_t>(std::count(active.begin(), active.end(), 1)); }
  bool at(std::size_t wr, std::size_t wc) const { return active[wr * window_cols + wc] != 0; }
};

struct Window {
  std::size_t row = 0;  // window-grid position
  std::size_t col = 0;
  std::vector<std::uint32_t> interior;  // grid cells, ascending
  std::vector<std::uint32_t> keys;      // interior plus halo ring, ascending
};

// Partition of a token grid into l x l windows. Cells are row-major indices
// r * grid_cols + c. Extents that l does not divide get partial windows on the
// right and bottom, which is the same as padding with inert tokens that never
// produce output.
struct AttentionPlan {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t window = 0;
  std::size_t halo = 0;
  std::size_t window_rows = 0;
  std::size_t window_cols = 0;
  std::vector<Window> windows;
  std::vector<std::uint32_t> active;          // ascending window ids
  std::vector<std::uint32_t> perm;            // window-first position -> cell
  std::vector<std::uint32_t> inverse_perm;    // cell -> window-first position
  std::vector<std::uint32_t> window_of_cell;

  std::size_t cells() const { return grid_rows * grid_cols; }
  std::size_t window_id(std::size_t wr, std::size_t wc) const { return wr * window_cols + wc; }

  bool is_active(std::size_t window_id) const {
    return std::binary_search(active.begin(), active.end(), static_cast<std::uint32_t>(window_id));
  }

  bool cell_active(std::size_t cell) const { return is_active(window_of_cell[cell]); }
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Windows of size l with a `halo`-wide ring of neighbouring cells added to
// each key set (clipped at the grid border). `activation` of nullptr marks
// every window active.
inline AttentionPlan build_window_plan(std::size_t grid_rows, std::size_t grid_cols, long window, long halo,
                                       const WindowActivation* activation = nullptr) {
  if (window <= 0) throw ConfigError("window size must be positive, got " + std::to_string(window));
  if (halo < 0 || halo >= window) {
    throw ConfigError("halo must satisfy 0 <= halo < window, got halo=" + std::to_string(halo) +
                      " window=" + std::to_string(window));
  }
  if (grid_rows == 0 || grid_cols == 0) throw ConfigError("token grid must be non-empty");

  AttentionPlan plan;
  plan.grid_rows = grid_rows;
  plan.grid_cols = grid_cols;
  plan.window = static_cast<std::size_t>(window);
  plan.halo = static_cast<std::size_t>(halo);
  plan.window_rows = ceil_div(grid_rows, plan.window);
  plan.window_cols = ceil_div(grid_cols, plan.window);
  const std::size_t l = plan.window, h = plan.halo;

  if (activation != nullptr &&
      (activation->window_rows != plan.window_rows || activation->window_cols != plan.window_cols)) {
    throw PlanError("window activation grid " + std::to_string(activation->window_rows) + "x" +
                    std::to_string(activation->window_cols) + " does not match plan " +
                    std::to_string(plan.window_rows) + "x" + std::to_string(plan.window_cols));
  }

  plan.window_of_cell.assign(plan.cells(), 0);
  plan.inverse_perm.assign(plan.cells(), 0);
  plan.perm.reserve(plan.cells());
  for (std::size_t wr = 0; wr < plan.window_rows; ++wr) {
    for (std::size_t wc = 0; wc < plan.window_cols; ++wc) {
      Window w;
      w.row = wr;
      w.col = wc;
      const std::size_t r0 = wr * l, r1 = std::min(grid_rows, r0 + l);
      const std::size_t c0 = wc * l, c1 = std::min(grid_cols, c0 + l);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          const auto cell = static_cast<std::uint32_t>(r * grid_cols + c);
          w.interior.push_back(cell);
          plan.window_of_cell[cell] = static_cast<std::uint32_t>(plan.windows.size());
          plan.inverse_perm[cell] = static_cast<std::uint32_t>(plan.perm.size());
          plan.perm.push_back(cell);
        }
      }
      const std::size_t hr0 = r0 >= h ? r0 - h : 0, hr1 = std::min(grid_rows, r1 + h);
      const std::size_t hc0 = c0 >= h ? c0 - h : 0, hc1 = std::min(grid_cols, c1 + h);
      for (std::size_t r = hr0; r < hr1; ++r)
        for (std::size_t c = hc0; c < hc1; ++c) w.keys.push_back(static_cast<std::uint32_t>(r * grid_cols + c));
      if (activation == nullptr || activation->at(wr, wc)) {
        plan.active.push_back(static_cast<std::uint32_t>(plan.windows.size()));
      }
      plan.windows.push_back(std::move(w));
    }
  }
  return plan;
}

}  // namespace hieredit
