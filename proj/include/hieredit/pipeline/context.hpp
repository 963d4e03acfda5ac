// SPDX-License-Identifier: Apache-2.0
//
// Images to model inputs. Latents are patchified pixels mapped to [-1, 1].

#pragma once

#include "hieredit/mmdit/params.hpp"
#include "hieredit/mmdit/sequence.hpp"
#include "hieredit/region/mask.hpp"

namespace hieredit {

inline LatentGrid encode_latent(const PixelImage& img, std::size_t patch) {
  LatentGrid g = patchify(img, patch);
  for (float& v : g.tokens.mutable_data()) v = 2.0f * v - 1.0f;
  return g;
}

inline PixelImage decode_latent(const LatentGrid& g) {
  LatentGrid p = g;
  p.tokens = g.tokens.clone();
  for (float& v : p.tokens.mutable_data()) v = 0.5f * (v + 1.0f);
  PixelImage img = unpatchify(p);
  img.clamp();
  return img;
}

inline Tensor gather_cells(const Tensor& tokens, const std::vector<std::uint32_t>& cells) {
  std::vector<float> out;
  out.reserve(cells.size() * tokens.cols());
  for (auto c : cells) out.insert(out.end(), tokens.row_ptr(c), tokens.row_ptr(c) + tokens.cols());
  return Tensor({cells.size(), tokens.cols()}, std::move(out));
}

struct ContextOptions {
  std::size_t window = 4;
  std::size_t halo = 1;
  bool integrated = true;
  bool anchors = true;
  std::size_t proxy_factor = 4;
};

struct EditContext {
  LatentGrid source;
  PixelMask tokens;  // token-resolution mask
  WindowActivation activation;
  AssembledSequence seq;
};

// `mask` is at pixel resolution; `proxy` at 1/proxy_factor of the source.
inline EditContext build_context(const ModelConfig& cfg, const PixelImage& source, const PixelImage& proxy,
                                 const PixelMask& mask, const std::vector<std::int32_t>& text,
                                 const PixelImage* control, const ContextOptions& o) {
  EditContext ctx;
  ctx.source = encode_latent(source, cfg.patch);
  ctx.tokens = token_mask(mask, cfg.patch);
  ctx.activation = mask_to_windows(ctx.tokens, o.window);
  const IntegratedTokens it = integrate_tokens(ctx.source, Tensor::zeros(ctx.source.tokens.shape()), ctx.tokens);
  std::optional<LatentGrid> anchors;
  if (o.anchors) {
    if (proxy.width * o.proxy_factor != source.width || proxy.height * o.proxy_factor != source.height) {
      throw DimensionError("proxy extent " + std::to_string(proxy.width) + "x" + std::to_string(proxy.height) +
                           " is not the source downsampled by " + std::to_string(o.proxy_factor));
    }
    anchors = encode_latent(proxy, cfg.patch);
  }
  std::optional<ControlInput> ctrl;
  if (control != nullptr) {
    LatentGrid g = encode_latent(*control, cfg.patch);
    const double rho_prime = static_cast<double>(ctx.source.cols) / static_cast<double>(g.cols);
    ctrl = ControlInput{std::move(g), rho_prime, {}};
    ctrl->delta = default_reference_offset(ctx.source.cols, rho_prime);
  }
  AssemblyOptions ao;
  ao.integrated = o.integrated;
  ao.window = static_cast<long>(o.window);
  ao.halo = static_cast<long>(o.halo);
  ao.activation = &ctx.activation;
  ao.rho = static_cast<double>(o.proxy_factor);
  ctx.seq = assemble_sequence(text, it, anchors ? &*anchors : nullptr, ctrl ? &*ctrl : nullptr, ao);
  return ctx;
}

}  // namespace hieredit
