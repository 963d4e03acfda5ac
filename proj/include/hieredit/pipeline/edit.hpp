// SPDX-License-Identifier: Apache-2.0
//
// End-to-end edit: proxy, mask, assembly, localized sampling, composite.

#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "hieredit/flow/init.hpp"
#include "hieredit/flow/sampler.hpp"
#include "hieredit/pipeline/context.hpp"
#include "hieredit/pipeline/synthetic.hpp"

#include <json.hpp>

namespace hieredit {

enum class InitMode { Intermediate, Noise };

struct EditConfig {
  std::size_t window = 4;  // tokens
  std::size_t halo = 1;
  std::size_t total_steps = 28;
  std::size_t executed_steps = 10;
  double alpha = 0.1;  // noise addition ratio
  InitMode init = InitMode::Intermediate;  // Noise runs `executed_steps` from t = 1
  bool lwa = true;  // local-window attention
  bool fc = true;   // static-row feature cache
  bool ti = true;   // integrated token sequence
  bool anchors = true;
  std::size_t proxy_factor = 4;
  MaskParams mask;
  SharpenParams sharpen;
  std::size_t feather = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  FlowSchedule schedule() const {
    return init == InitMode::Intermediate ? FlowSchedule{total_steps, executed_steps}
                                          : FlowSchedule::full(executed_steps);
  }
};

struct EditRequest {
  PixelImage source;
  std::vector<std::int32_t> instruction;
  std::optional<PixelMask> user_mask;
  std::optional<Bbox> user_bbox;
  std::optional<PixelImage> control;
  std::optional<PixelImage> proxy;  // pre-edited proxy; otherwise `editor` runs
  ProxyEditor editor;
  EditConfig config;
  StepObserver observe;  // per sampling step, latent of the noisy tokens
};

struct StageTimes {
  double proxy = 0, mask = 0, assembly = 0, sampling = 0, composite = 0;
  double total() const { return proxy + mask + assembly + sampling + composite; }
};

struct EditResult {
  PixelImage output;
  RefinedMask mask;
  std::optional<Bbox> bbox;
  bool empty_edit = false;
  std::size_t active_windows = 0;
  std::size_t total_windows = 0;
  std::size_t noisy_tokens = 0;
  std::size_t sequence_length = 0;
  double edit_ratio = 0.0;
  std::uint64_t attention_flops = 0;
  std::size_t cache_builds = 0;
  StageTimes ms;
  EditConfig config;
  Tensor latent;  // final noisy-token latent
};

namespace detail {

class StageClock {
 public:
  StageClock() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <class Fn>
auto stage(const char* name, double& ms, Fn&& fn) {
  const StageClock clock;
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      ms = clock.ms();
    } else {
      auto out = fn();
      ms = clock.ms();
      return out;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what(), std::current_exception());
  }
}

}  // namespace detail

inline EditResult run_edit(const EditRequest& req, const ModelParams& model) {
  const EditConfig& cfg = req.config;
  const ModelConfig& mc = model.config;
  EditResult res;
  res.config = cfg;
  if (req.proxy.has_value() == static_cast<bool>(req.editor)) {
    throw ConfigError("edit request needs exactly one of a proxy image or a proxy editor");
  }
  if (req.source.width % (mc.patch * cfg.proxy_factor) != 0 || req.source.height % (mc.patch * cfg.proxy_factor) != 0) {
    throw DimensionError("source extent must be a multiple of patch x proxy factor (" +
                         std::to_string(mc.patch * cfg.proxy_factor) + ")");
  }

  const PixelImage lowres = downsample(req.source, cfg.proxy_factor);
  const PixelImage proxy = detail::stage("proxy", res.ms.proxy, [&] {
    PixelImage p = req.proxy ? *req.proxy : req.editor(lowres, req.instruction, req.control ? &*req.control : nullptr);
    if (!p.same_extent(lowres)) {
      throw DimensionError("edited proxy is " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                           ", expected " + std::to_string(lowres.width) + "x" + std::to_string(lowres.height));
    }
    return p;
  });

  detail::stage("mask", res.ms.mask, [&] {
    res.mask = refine_mask(lowres, proxy, cfg.mask, cfg.proxy_factor, req.user_mask ? &*req.user_mask : nullptr);
    res.bbox = refine_bbox(req.user_bbox, res.mask.mask, mc.patch * cfg.window);
    // A user box with no detected change marks its own area for editing.
    if (res.mask.mask.empty() && res.bbox) {
      for (std::size_t y = req.user_bbox->y0; y < req.user_bbox->y1; ++y)
        for (std::size_t x = req.user_bbox->x0; x < req.user_bbox->x1; ++x) res.mask.mask.set(x, y);
      res.mask.provenance = MaskProvenance::User;
    }
    res.edit_ratio = res.mask.mask.fraction();
  });
  if (!res.bbox) {
    res.empty_edit = true;
    res.output = req.source;
    return res;
  }

  EditContext ctx;
  FlowState state;
  detail::stage("assembly", res.ms.assembly, [&] {
    ContextOptions co;
    co.window = cfg.window;
    co.halo = cfg.halo;
    co.integrated = cfg.ti;
    co.anchors = cfg.anchors;
    co.proxy_factor = cfg.proxy_factor;
    ctx = build_context(mc, req.source, proxy, res.mask.mask, req.instruction, req.control ? &*req.control : nullptr,
                        co);
    Rng rng(cfg.seed);
    const FlowSchedule sched = cfg.schedule();
    if (cfg.init == InitMode::Intermediate) {
      const PixelImage ref = sharpen_upsample(proxy, req.source.width, req.source.height, cfg.sharpen);
      const Tensor reference = gather_cells(encode_latent(ref, mc.patch).tokens, ctx.seq.noisy_cells);
      state = intermediate_init(reference, rng, cfg.alpha, sched);
    } else {
      state = noise_init({ctx.seq.noisy_cells.size(), mc.patch_dim()}, rng);
    }
  });
  res.active_windows = ctx.seq.plan.active.size();
  res.total_windows = ctx.seq.plan.windows.size();
  res.noisy_tokens = ctx.seq.noisy_cells.size();
  res.sequence_length = ctx.seq.size();

  detail::stage("sampling", res.ms.sampling, [&] {
    Engine engine(model, ctx.seq, {cfg.lwa, cfg.fc, cfg.threads});
    res.latent = euler_sample(engine, state, cfg.schedule(), req.observe);
    res.attention_flops = engine.attention_flops();
    res.cache_builds = engine.cache_builds();
  });

  detail::stage("composite", res.ms.composite, [&] {
    LatentGrid out = ctx.source;
    out.tokens = ctx.source.tokens.clone();
    const std::size_t pd = mc.patch_dim();
    for (std::size_t s = 0; s < ctx.seq.noisy_cells.size(); ++s) {
      std::copy_n(res.latent.row_ptr(s), pd, out.tokens.mutable_ptr() + ctx.seq.noisy_cells[s] * pd);
    }
    res.output = composite(req.source, decode_latent(out), res.mask.mask, cfg.feather);
  });
  return res;
}

inline nlohmann::json to_json(const EditResult& r) {
  nlohmann::json j;
  j["empty_edit"] = r.empty_edit;
  j["edit_ratio"] = r.edit_ratio;
  j["mask_pixels"] = r.mask.mask.count();
  j["mask_provenance"] = r.mask.provenance == MaskProvenance::Diff ? "diff"
                         : r.mask.provenance == MaskProvenance::User ? "user" : "union";
  if (r.bbox) {
    j["bbox"] = {r.bbox->x0, r.bbox->y0, r.bbox->x1, r.bbox->y1};
  } else {
    j["bbox"] = nullptr;
  }
  j["active_windows"] = r.active_windows;
  j["total_windows"] = r.total_windows;
  j["noisy_tokens"] = r.noisy_tokens;
  j["sequence_length"] = r.sequence_length;
  j["attention_flops"] = r.attention_flops;
  j["cache_builds"] = r.cache_builds;
  j["timing_ms"] = {{"proxy", r.ms.proxy},       {"mask", r.ms.mask},           {"assembly", r.ms.assembly},
                    {"sampling", r.ms.sampling}, {"composite", r.ms.composite}, {"total", r.ms.total()}};
  const auto& c = r.config;
  j["flags"] = {{"lwa", c.lwa}, {"fc", c.fc}, {"ti", c.ti}, {"anchors", c.anchors}};
  j["config"] = {{"window", c.window},
                 {"halo", c.halo},
                 {"total_steps", c.total_steps},
                 {"executed_steps", c.executed_steps},
                 {"alpha", c.alpha},
                 {"init", c.init == InitMode::Intermediate ? "intermediate" : "noise"},
                 {"seed", c.seed},
                 {"threads", c.threads},
                 {"tau", c.mask.tau},
                 {"dilation", c.mask.dilation},
                 {"feather", c.feather}};
  return j;
}

}  // namespace hieredit
