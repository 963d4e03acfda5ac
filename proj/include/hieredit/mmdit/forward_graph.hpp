// SPDX-License-Identifier: Apache-2.0
//
// Differentiable forward pass over a whole assembled sequence, built from tape
// ops. Attention runs dense under the window-equivalent allow matrix, so this
// path also serves as the reference for the inference engine.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hieredit/mmdit/lora.hpp"
#include "hieredit/mmdit/params.hpp"
#include "hieredit/mmdit/sequence.hpp"

namespace hieredit {

// Sinusoidal features of t, scaled by 1000 as for integer diffusion steps.
inline Tensor timestep_features(double t, std::size_t dims) {
  Tensor e({1, dims});
  const std::size_t half = dims / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    e.mutable_data()[k] = static_cast<float>(std::cos(1000.0 * t * w));
    e.mutable_data()[half + k] = static_cast<float>(std::sin(1000.0 * t * w));
  }
  return e;
}

inline Tensor timestep_embedding(const ModelParams& m, double t) {
  const Tensor h = silu(add(matmul(timestep_features(t, m.config.time_freqs), m.time_w1), m.time_b1));
  return add(matmul(h, m.time_w2), m.time_b2);
}

// Block modulation [1 x 6D] and final modulation [1 x 2D] for one timestep.
struct Modulation {
  std::vector<Tensor> blocks;
  Tensor final;
};

inline Modulation modulation(const ModelParams& m, double t) {
  const Tensor st = silu(timestep_embedding(m, t));
  Modulation mod;
  for (const auto& b : m.blocks) mod.blocks.push_back(add(matmul(st, b.mod_w), b.mod_b));
  mod.final = add(matmul(st, m.final_w), m.final_b);
  return mod;
}

// Per-row flags shared by both forward paths.
struct RowClasses {
  std::vector<float> is_static;   // static role: LoRA on, timestep-free modulation
  std::vector<float> is_dynamic;
  std::vector<float> live;        // hidden state evolves (not frozen, not inert)
  std::vector<std::uint8_t> frozen;  // image token of an inactive window
};

inline RowClasses classify_rows(const AssembledSequence& seq) {
  const std::size_t n = seq.size();
  RowClasses rc{std::vector<float>(n), std::vector<float>(n), std::vector<float>(n), std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const bool st = role_is_static(seq.layout.roles[i]);
    rc.is_static[i] = st ? 1.0f : 0.0f;
    rc.is_dynamic[i] = st ? 0.0f : 1.0f;
    const auto cell = seq.layout.cell[i];
    rc.frozen[i] = cell >= 0 && !seq.plan.cell_active(static_cast<std::size_t>(cell));
    rc.live[i] = (!rc.frozen[i] && !seq.layout.is_inert(i)) ? 1.0f : 0.0f;
  }
  return rc;
}

inline void check_sequence(const ModelParams& m, const AssembledSequence& seq, const Tensor& z) {
  if (seq.content.cols() != m.config.patch_dim()) {
    throw DimensionError("sequence token width " + std::to_string(seq.content.cols()) + " vs model patch_dim " +
                         std::to_string(m.config.patch_dim()));
  }
  for (auto id : seq.text_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= m.config.text_vocab) {
      throw ConfigError("text id " + std::to_string(id) + " outside the vocabulary");
    }
  if (z.rank() != 2 || z.rows() != seq.noisy_rows.size() || z.cols() != m.config.patch_dim()) {
    throw DimensionError("noisy latent " + shape_str(z.shape()) + " vs " + std::to_string(seq.noisy_rows.size()) +
                         " noisy tokens");
  }
}

inline void check_timestep(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("timestep " + std::to_string(t) + " outside [0, 1]");
}

namespace detail {

inline Tensor broadcast_rows(const Tensor& row, std::size_t n) { return add_row(Tensor::zeros({n, row.cols()}), row); }

inline std::vector<std::uint32_t> role_ids(const AssembledSequence& seq) {
  std::vector<std::uint32_t> ids;
  for (auto r : seq.layout.roles) ids.push_back(static_cast<std::uint32_t>(r));
  return ids;
}

}  // namespace detail

// Velocity for the live Noisy tokens (rows of seq.noisy_rows, ascending cell)
// given their current latent z [M x patch_dim].
inline Tensor forward_graph(const ModelParams& m, const AssembledSequence& seq, const Tensor& z, double t) {
  check_timestep(t);
  check_sequence(m, seq, z);
  const auto& cfg = m.config;
  const std::size_t n = seq.size(), d = cfg.token_dim(), n_text = seq.offsets[1];
  const float lscale = static_cast<float>(cfg.lora_scale());
  const RowClasses rc = classify_rows(seq);
  const BoolMatrix allow = masked_equivalent_dense(seq.plan, seq.layout);

  // Patch rows with the noisy rows replaced by z.
  Tensor base = seq.content.clone();
  std::vector<std::uint32_t> slots;
  for (auto r : seq.noisy_rows) {
    std::fill_n(base.mutable_ptr() + r * base.cols(), base.cols(), 0.0f);
    slots.push_back(r);
  }
  Tensor patches = add(base, scatter_rows(z, slots, n));
  std::vector<std::uint32_t> patch_rows;
  for (std::size_t i = n_text; i < n; ++i) patch_rows.push_back(static_cast<std::uint32_t>(i));
  std::vector<Tensor> parts;
  if (n_text > 0) {
    std::vector<std::uint32_t> ids(seq.text_ids.begin(), seq.text_ids.end());
    parts.push_back(gather_rows(m.text_emb, ids));
  }
  if (!patch_rows.empty()) parts.push_back(add_row(matmul(gather_rows(patches, patch_rows), m.patch_in), m.patch_in_b));
  Tensor h = add(concat_rows(parts), gather_rows(m.role_emb, detail::role_ids(seq)));

  const Modulation mt = modulation(m, t), m0 = modulation(m, 0.0);
  const RopeParams rope = cfg.rope();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& b = m.blocks[l];
    try {
      const Tensor mod = add(row_scale(detail::broadcast_rows(mt.blocks[l], n), rc.is_dynamic),
                             row_scale(detail::broadcast_rows(m0.blocks[l], n), rc.is_static));
      auto part = [&](std::size_t k) { return slice_cols(mod, k * d, (k + 1) * d); };
      const Tensor x = add(mul(rms_norm_rows(h), add_scalar(part(1), 1.0f)), part(0));
      Tensor q = lora_apply_rows(b.wq, b.lq, x, lscale, rc.is_static);
      Tensor k = lora_apply_rows(b.wk, b.lk, x, lscale, rc.is_static);
      const Tensor v = lora_apply_rows(b.wv, b.lv, x, lscale, rc.is_static);
      q = rope_rotate(q, seq.coords, rope, cfg.heads);
      k = rope_rotate(k, seq.coords, rope, cfg.heads);
      const Tensor a = masked_attention(q, k, v, allow, cfg.heads);
      const Tensor o = lora_apply_rows(b.wo, b.lo, a, lscale, rc.is_static);
      h = add(h, row_scale(mul(part(2), o), rc.live));
      const Tensor y = add(mul(rms_norm_rows(h), add_scalar(part(4), 1.0f)), part(3));
      const Tensor f = matmul(silu(matmul(y, b.w1)), b.w2);
      h = add(h, row_scale(mul(part(5), f), rc.live));
    } catch (const NumericError& e) {
      throw NumericError("layer " + std::to_string(l) + ": " + e.what());
    }
  }
  const std::size_t mrows = seq.noisy_rows.size();
  if (mrows == 0) return Tensor::zeros({0, cfg.patch_dim()});
  const Tensor hn = gather_rows(h, seq.noisy_rows);
  const Tensor shift = detail::broadcast_rows(slice_cols(mt.final, 0, d), mrows);
  const Tensor scl = detail::broadcast_rows(slice_cols(mt.final, d, 2 * d), mrows);
  const Tensor y = add(mul(rms_norm_rows(hn), add_scalar(scl, 1.0f)), shift);
  return add_row(matmul(y, m.patch_out), m.patch_out_b);
}

// Mean squared error between the predicted velocity at z_t = (1-t) x0 + t x1
// and the straight-path target x1 - x0, over the Noisy tokens.
inline Tensor flow_matching_loss(const ModelParams& m, const AssembledSequence& seq, const Tensor& x0,
                                 const Tensor& x1, double t) {
  detail::require_same_shape(x0, x1, "flow_matching_loss");
  const Tensor zt = add(scale(x0, static_cast<float>(1.0 - t)), scale(x1, static_cast<float>(t)));
  return mse(forward_graph(m, seq, zt.detach(), t), sub(x1, x0).detach());
}

}  // namespace hieredit
