// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hieredit/attention/plan.hpp"
#include "hieredit/mmdit/config.hpp"
#include "hieredit/mmdit/lora.hpp"
#include "hieredit/numerics/rng.hpp"

namespace hieredit {

inline constexpr std::size_t kRoleCount = 5;

struct BlockParams {
  // Frozen base projections.
  Tensor wq, wk, wv, wo;
  Tensor w1, w2;  // feed-forward
  LoraFactors lq, lk, lv, lo;
  // adaLN modulation from the timestep embedding: shift, scale, gate for the
  // attention branch then shift, scale, gate for the feed-forward branch.
  Tensor mod_w, mod_b;
};

struct ModelParams {
  ModelConfig config;
  bool frozen = true;  // base projections excluded from optimisation
  std::vector<BlockParams> blocks;
  Tensor patch_in, patch_in_b;
  Tensor patch_out, patch_out_b;
  Tensor text_emb;
  Tensor role_emb;
  Tensor time_w1, time_b1, time_w2, time_b2;
  Tensor final_w, final_b;  // shift, scale before the output projection
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
  bool base;  // frozen base weight
};

inline std::vector<NamedParam> named_params(ModelParams& m) {
  std::vector<NamedParam> out;
  auto add = [&](std::string name, Tensor& t, bool base = false) { out.push_back({std::move(name), &t, base}); };
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& b = m.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    add(p + "wq", b.wq, true);
    add(p + "wk", b.wk, true);
    add(p + "wv", b.wv, true);
    add(p + "wo", b.wo, true);
    add(p + "w1", b.w1, true);
    add(p + "w2", b.w2, true);
    for (auto [name, f] : {std::pair{"q", &b.lq}, {"k", &b.lk}, {"v", &b.lv}, {"o", &b.lo}}) {
      add(p + "lora_" + name + ".a", f->a);
      add(p + "lora_" + name + ".b", f->b);
    }
    add(p + "mod_w", b.mod_w);
    add(p + "mod_b", b.mod_b);
  }
  add("patch_in", m.patch_in);
  add("patch_in_b", m.patch_in_b);
  add("patch_out", m.patch_out);
  add("patch_out_b", m.patch_out_b);
  add("text_emb", m.text_emb);
  add("role_emb", m.role_emb);
  add("time_w1", m.time_w1);
  add("time_b1", m.time_b1);
  add("time_w2", m.time_w2);
  add("time_b2", m.time_b2);
  add("final_w", m.final_w);
  add("final_b", m.final_b);
  return out;
}

inline std::vector<NamedParam> named_params(const ModelParams& m) {
  return named_params(const_cast<ModelParams&>(m));
}

inline bool is_trainable(const ModelParams& m, const NamedParam& p) { return !(p.base && m.frozen); }

// Hash over every frozen base weight.
inline std::uint64_t base_fingerprint(const ModelParams& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : named_params(m))
    if (p.base) h = fingerprint(p.tensor->data(), h);
  return h;
}

inline std::uint64_t params_fingerprint(const ModelParams& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : named_params(m)) h = fingerprint(p.tensor->data(), h);
  return h;
}

enum class InitStyle {
  Training,  // zero gates/modulation and zero output projection, as for fine-tuning
  Random,    // every trainable tensor random except LoRA B, for tests
};

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed, InitStyle style = InitStyle::Training) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.token_dim(), f = cfg.ffn_dim(), p = cfg.patch_dim(), r = cfg.lora_rank;
  auto normal = [&](Shape s, double stdev) {
    Tensor t = rng_normal(rng, std::move(s));
    for (float& v : t.mutable_data()) v = static_cast<float>(v * stdev);
    return t;
  };
  const bool random = style == InitStyle::Random;
  auto maybe = [&](Shape s, double stdev) { return random ? normal(std::move(s), stdev) : Tensor::zeros(std::move(s)); };
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));

  ModelParams m;
  m.config = cfg;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    BlockParams b;
    b.wq = normal({d, d}, sd);
    b.wk = normal({d, d}, sd);
    b.wv = normal({d, d}, sd);
    b.wo = normal({d, d}, sd);
    b.w1 = normal({d, f}, sd);
    b.w2 = normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f)));
    for (LoraFactors* lf : {&b.lq, &b.lk, &b.lv, &b.lo}) {
      lf->a = normal({d, r}, sd);
      lf->b = Tensor::zeros({r, d});
    }
    b.mod_w = maybe({d, 6 * d}, 0.2 * sd);
    b.mod_b = maybe({1, 6 * d}, 0.2);
    m.blocks.push_back(std::move(b));
  }
  m.patch_in = normal({p, d}, 1.0 / std::sqrt(static_cast<double>(p)));
  m.patch_in_b = Tensor::zeros({1, d});
  m.patch_out = maybe({d, p}, sd);
  m.patch_out_b = Tensor::zeros({1, p});
  m.text_emb = normal({cfg.text_vocab, d}, 0.5);
  m.role_emb = normal({kRoleCount, d}, 0.5);
  m.time_w1 = normal({cfg.time_freqs, d}, 1.0 / std::sqrt(static_cast<double>(cfg.time_freqs)));
  m.time_b1 = Tensor::zeros({1, d});
  m.time_w2 = normal({d, d}, sd);
  m.time_b2 = Tensor::zeros({1, d});
  m.final_w = maybe({d, 2 * d}, 0.2 * sd);
  m.final_b = maybe({1, 2 * d}, 0.2);
  for (auto& np : named_params(m)) np.tensor->set_requires_grad(is_trainable(m, np));
  return m;
}

// Fills every LoRA B factor with gaussian noise (tests exercising the adapter).
inline void randomize_lora(ModelParams& m, std::uint64_t seed, double stdev = 0.05) {
  Rng rng(seed);
  for (auto& b : m.blocks)
    for (LoraFactors* lf : {&b.lq, &b.lk, &b.lv, &b.lo})
      for (float& v : lf->b.mutable_data()) v = static_cast<float>(rng.normal() * stdev);
}

inline ModelParams clone_model(const ModelParams& src) {
  ModelParams m = src;
  auto from = named_params(src);
  auto to = named_params(m);
  for (std::size_t i = 0; i < to.size(); ++i) {
    *to[i].tensor = from[i].tensor->clone();
    to[i].tensor->set_requires_grad(from[i].tensor->requires_grad());
  }
  return m;
}

}  // namespace hieredit
