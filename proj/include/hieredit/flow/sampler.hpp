// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "hieredit/flow/schedule.hpp"
#include "hieredit/mmdit/engine.hpp"

namespace hieredit {

using VelocityField = std::function<Tensor(const Tensor& z, double t)>;
// Called after each executed step with the step index and the new latent.
using StepObserver = std::function<void(std::size_t step, const Tensor& z)>;

// Euler steps z <- z + (t_{i+1} - t_i) v(z, t_i) from state.step_index to the end.
inline Tensor euler_sample(const VelocityField& field, const FlowState& state, const FlowSchedule& schedule,
                           const StepObserver& observe = {}) {
  schedule.validate();
  if (state.step_index > schedule.total) {
    throw ContractError("euler_sample: step index " + std::to_string(state.step_index) + " past the schedule");
  }
  Tensor z = state.latent.detach().clone();
  // The trajectory is carried in double; each step's float latent is a single
  // rounding of it, so rounding does not compound over steps.
  std::vector<double> acc(z.data().begin(), z.data().end());
  for (std::size_t i = state.step_index; i < schedule.total; ++i) {
    const double t = schedule.time(i), dt = schedule.time(i + 1) - t;
    const Tensor v = field(z, t);
    detail::require_same_shape(v, z, "euler_sample velocity");
    float* zp = z.mutable_ptr();
    for (std::size_t k = 0; k < z.numel(); ++k) {
      acc[k] += dt * static_cast<double>(v[k]);
      zp[k] = static_cast<float>(acc[k]);
    }
    if (observe) observe(i, z);
  }
  return z;
}

inline Tensor euler_sample(Engine& engine, const FlowState& state, const FlowSchedule& schedule,
                           const StepObserver& observe = {}) {
  return euler_sample([&](const Tensor& z, double t) { return engine.velocity(z, t); }, state, schedule, observe);
}

}  // namespace hieredit
