// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "hieredit/attention/plan.hpp"

namespace hieredit {

// Analytic attention cost over the image tokens of one layer. Both figures
// count the score matmul only, 2 * |queries| * |keys| * d; the P.V product and
// the softmax are proportional to the same score count, so the ratio is
// unchanged by including them.
struct FlopReport {
  std::uint64_t dense_flops = 0;
  std::uint64_t windowed_flops = 0;
  double ratio = 0.0;  // dense / windowed
};

inline FlopReport flop_count(const AttentionPlan& plan, std::uint64_t head_dim) {
  FlopReport r;
  const std::uint64_t n = plan.cells();
  r.dense_flops = 2ull * n * n * head_dim;
  for (auto w : plan.active) {
    r.windowed_flops += 2ull * plan.windows[w].interior.size() * plan.windows[w].keys.size() * head_dim;
  }
  r.ratio = r.windowed_flops == 0 ? 0.0 : static_cast<double>(r.dense_flops) / static_cast<double>(r.windowed_flops);
  return r;
}

// Count-based form: the first `active_count` windows in row-major order are
// taken as active.
inline FlopReport flop_count(std::size_t grid_rows, std::size_t grid_cols, long window, long halo,
                             std::size_t active_count, std::uint64_t head_dim) {
  AttentionPlan plan = build_window_plan(grid_rows, grid_cols, window, halo);
  if (active_count > plan.windows.size()) throw ConfigError("active_count exceeds the number of windows");
  plan.active.resize(active_count);
  return flop_count(plan, head_dim);
}

}  // namespace hieredit
