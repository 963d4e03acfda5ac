// SPDX-License-Identifier: Apache-2.0
//
// Starting the sampler part-way down the schedule from an upsampled proxy.

#pragma once

#include "hieredit/flow/schedule.hpp"
#include "hieredit/numerics/rng.hpp"
#include "hieredit/region/resample.hpp"

namespace hieredit {

struct SharpenParams {
  double sigma = 1.0;
  double amount = 0.5;
};

// Bilinear upsample to (width, height), then unsharp masking, clamped to [0, 1].
inline PixelImage sharpen_upsample(const PixelImage& lowres, std::size_t width, std::size_t height,
                                   const SharpenParams& p = {}) {
  if (width % lowres.width != 0 || height % lowres.height != 0 ||
      width / lowres.width != height / lowres.height || width < lowres.width) {
    throw ResampleError("sharpen_upsample: " + std::to_string(width) + "x" + std::to_string(height) +
                        " is not an integer multiple of " + std::to_string(lowres.width) + "x" +
                        std::to_string(lowres.height));
  }
  PixelImage up = bilinear_upsample(lowres, width / lowres.width);
  if (p.amount != 0.0) {
    const PixelImage blur = gaussian_blur(up, p.sigma);
    for (std::size_t i = 0; i < up.data.size(); ++i) {
      up.data[i] = static_cast<float>(up.data[i] + p.amount * (static_cast<double>(up.data[i]) - blur.data[i]));
    }
  }
  up.clamp();
  return up;
}

// latent = alpha * noise + (1 - alpha) * interpolate(reference, noise', t_start).
// alpha must lie strictly inside (0, 1) unless `allow_endpoints` is set.
inline FlowState intermediate_init(const Tensor& reference, Rng& rng, double alpha, const FlowSchedule& schedule,
                                   bool allow_endpoints = false) {
  schedule.validate();
  const bool inside = alpha > 0.0 && alpha < 1.0;
  const bool endpoint = alpha == 0.0 || alpha == 1.0;
  if (!inside && !(allow_endpoints && endpoint)) {
    throw ContractError("intermediate_init: alpha " + std::to_string(alpha) + " must lie in (0, 1)");
  }
  const Tensor pure = rng_normal(rng, reference.shape());
  const Tensor fresh = rng_normal(rng, reference.shape());
  const Tensor ref_t = interpolate(reference, fresh, schedule.start_time());
  FlowState s;
  s.step_index = schedule.start_index();
  s.alpha = alpha;
  if (alpha == 1.0) {
    s.latent = pure;
  } else if (alpha == 0.0) {
    s.latent = ref_t;
  } else {
    s.latent = Tensor(reference.shape());
    float* o = s.latent.mutable_ptr();
    for (std::size_t i = 0; i < reference.numel(); ++i) {
      o[i] = static_cast<float>(alpha * pure[i] + (1.0 - alpha) * static_cast<double>(ref_t[i]));
    }
  }
  return s;
}

// Plain Gaussian start at the top of the schedule.
inline FlowState noise_init(Shape shape, Rng& rng) {
  FlowState s;
  s.latent = rng_normal(rng, std::move(shape));
  return s;
}

}  // namespace hieredit
