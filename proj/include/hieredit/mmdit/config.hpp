// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "hieredit/error.hpp"
#include "hieredit/rope.hpp"

namespace hieredit {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t head_dim = 32;
  std::size_t ffn_mult = 2;
  std::size_t text_vocab = 32;
  std::size_t lora_rank = 16;
  double lora_alpha = 16.0;  // adapter scale is lora_alpha / lora_rank
  std::size_t window = 16;   // tokens per window side
  std::size_t halo = 1;
  std::size_t patch = 16;    // pixels per token side
  std::size_t channels = 3;
  std::size_t time_freqs = 64;
  double rope_base = 10000.0;

  std::size_t token_dim() const { return heads * head_dim; }
  std::size_t ffn_dim() const { return ffn_mult * token_dim(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }

  RopeParams rope() const {
    RopeParams p;
    p.head_dim = head_dim;
    p.base_frequency = rope_base;
    return p;
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
    if (layers == 0) fail("layers must be positive");
    if (heads == 0) fail("heads must be positive");
    if (head_dim == 0 || head_dim % 2 != 0) fail("head_dim must be even and positive");
    if (ffn_mult == 0) fail("ffn_mult must be positive");
    if (text_vocab == 0) fail("text_vocab must be positive");
    if (lora_rank < 1 || lora_rank > token_dim()) {
      fail("lora_rank must be in [1, token_dim], got " + std::to_string(lora_rank));
    }
    if (!(lora_alpha > 0.0)) fail("lora_alpha must be positive");
    if (window == 0) fail("window must be positive");
    if (halo >= window) fail("halo must be smaller than window");
    if (patch == 0 || channels == 0) fail("patch and channels must be positive");
    if (time_freqs == 0 || time_freqs % 2 != 0) fail("time_freqs must be even and positive");
    rope().validate();
  }
};

}  // namespace hieredit
