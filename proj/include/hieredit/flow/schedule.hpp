// SPDX-License-Identifier: Apache-2.0
//
// Straight-path flow: z_t = (1 - t) x0 + t x1, t = 1 is noise, t = 0 clean.

#pragma once

#include <string>
#include <vector>

#include "hieredit/numerics/ops.hpp"

namespace hieredit {

inline Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("interpolate: t = " + std::to_string(t) + " outside [0, 1]");
  detail::require_same_shape(x0, x1, "interpolate");
  if (t == 0.0) return x0.detach().clone();
  if (t == 1.0) return x1.detach().clone();
  Tensor out(x0.shape());
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    o[i] = static_cast<float>((1.0 - t) * static_cast<double>(x0[i]) + t * static_cast<double>(x1[i]));
  }
  return out;
}

// Uniform descending grid t_i = 1 - i / T, i = 0..T. Sampling runs steps
// start_index .. T-1, each from t_i to t_{i+1}.
struct FlowSchedule {
  std::size_t total = 28;
  std::size_t executed = 10;

  static FlowSchedule full(std::size_t steps) { return {steps, steps}; }

  void validate() const {
    if (total == 0) throw ConfigError("schedule: total steps must be positive");
    if (executed == 0 || executed > total) {
      throw ConfigError("schedule: executed steps " + std::to_string(executed) + " not in [1, " +
                        std::to_string(total) + "]");
    }
  }
  std::size_t start_index() const { return total - executed; }
  double time(std::size_t i) const {
    return i >= total ? 0.0 : 1.0 - static_cast<double>(i) / static_cast<double>(total);
  }
  double start_time() const { return time(start_index()); }
  std::vector<double> timesteps() const {
    std::vector<double> ts;
    for (std::size_t i = 0; i <= total; ++i) ts.push_back(time(i));
    return ts;
  }
};

struct FlowState {
  Tensor latent;
  std::size_t step_index = 0;
  double alpha = 1.0;  // noise share of the initial latent
};

}  // namespace hieredit
