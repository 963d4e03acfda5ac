// SPDX-License-Identifier: Apache-2.0
//
// Random sequences and models for equivalence checks.

#pragma once

#include "hieredit/mmdit/params.hpp"
#include "hieredit/mmdit/sequence.hpp"
#include "hieredit/numerics/rng.hpp"
#include "hieredit/region/mask.hpp"

namespace hieredit::oracle {

struct SequenceSpec {
  std::size_t rows = 4, cols = 4;
  std::size_t text = 3;
  bool anchors = true;
  bool control = false;
  double mask_density = 0.4;
};

struct SequenceFixture {
  AssembledSequence seq;
  Tensor z;  // latent of the noisy tokens
  PixelMask tokens;
};

inline ModelConfig tiny_config(std::size_t layers = 2) {
  ModelConfig c;
  c.layers = layers;
  c.heads = 2;
  c.head_dim = 8;
  c.ffn_mult = 2;
  c.text_vocab = 8;
  c.lora_rank = 4;
  c.lora_alpha = 4;
  c.patch = 2;
  c.window = 2;
  c.halo = 1;
  c.time_freqs = 8;
  return c;
}

inline PixelMask random_token_mask(Rng& rng, std::size_t rows, std::size_t cols, double density) {
  PixelMask m(cols, rows);
  for (auto& b : m.bits) b = rng.uniform() < density ? 1 : 0;
  return m;
}

inline SequenceFixture random_sequence(const ModelConfig& cfg, const SequenceSpec& spec, Rng& rng,
                                       AssemblyOptions opts = {}, const PixelMask* mask = nullptr) {
  const std::size_t pd = cfg.patch_dim();
  SequenceFixture fx;
  fx.tokens = mask ? *mask : random_token_mask(rng, spec.rows, spec.cols, spec.mask_density);
  LatentGrid src{spec.rows, spec.cols, cfg.patch, cfg.channels, rng_uniform(rng, {spec.rows * spec.cols, pd}, 0, 1)};
  const Tensor noisy = rng_normal(rng, {spec.rows * spec.cols, pd});
  const IntegratedTokens it = integrate_tokens(src, noisy, fx.tokens);
  std::vector<std::int32_t> text;
  for (std::size_t i = 0; i < spec.text; ++i) text.push_back(static_cast<std::int32_t>(rng.below(cfg.text_vocab)));
  const std::size_t ar = std::max<std::size_t>(1, spec.rows / 2), ac = std::max<std::size_t>(1, spec.cols / 2);
  LatentGrid anchors{ar, ac, cfg.patch, cfg.channels, rng_uniform(rng, {ar * ac, pd}, 0, 1)};
  ControlInput control{LatentGrid{2, 2, cfg.patch, cfg.channels, rng_uniform(rng, {4, pd}, 0, 1)}, 1.0,
                       default_reference_offset(spec.cols, 1.0)};
  opts.rho = 2.0;
  opts.window = static_cast<long>(cfg.window);
  opts.halo = static_cast<long>(cfg.halo);
  WindowActivation act;
  if (opts.activation == nullptr) {
    act = mask_to_windows(fx.tokens, cfg.window);
    opts.activation = &act;
  }
  fx.seq = assemble_sequence(text, it, spec.anchors ? &anchors : nullptr, spec.control ? &control : nullptr, opts);
  std::vector<float> z;
  for (auto c : fx.seq.noisy_cells) z.insert(z.end(), noisy.row_ptr(c), noisy.row_ptr(c) + pd);
  fx.z = Tensor({fx.seq.noisy_cells.size(), pd}, std::move(z));
  return fx;
}

}  // namespace hieredit::oracle
