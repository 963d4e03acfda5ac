// SPDX-License-Identifier: Apache-2.0
//
// Training loop over the synthetic edit task. Each step draws its fixture,
// timestep and noise from a stream keyed by (seed, step), so a run resumed
// from a checkpoint replays the uninterrupted run exactly.

#pragma once

#include <functional>

#include "hieredit/mmdit/train.hpp"
#include "hieredit/pipeline/context.hpp"
#include "hieredit/pipeline/synthetic.hpp"

namespace hieredit {

// Small model used for the synthetic task: 64 px images, 4 px tokens.
inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.layers = 3;
  c.heads = 4;
  c.head_dim = 16;
  c.ffn_mult = 2;
  c.text_vocab = 16;
  c.lora_rank = 8;
  c.lora_alpha = 8;
  c.window = 4;
  c.halo = 1;
  c.patch = 4;
  c.time_freqs = 32;
  return c;
}

struct TrainConfig {
  ModelConfig model = toy_model_config();
  SyntheticOptions data;
  std::size_t dataset_size = 240;
  std::uint64_t data_seed = 1;
  std::uint64_t seed = 7;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  AdamWConfig adam;
  bool freeze_base = false;
  double proxy_sigma = 0.0;  // corruption of the anchor proxy during training
};

inline TrainExample make_example(const ModelConfig& cfg, const SyntheticFixture& fx, Rng& rng,
                                 const ContextOptions& o, double proxy_sigma = 0.0) {
  PixelImage proxy = fx.proxy;
  if (proxy_sigma > 0.0) {
    for (float& v : proxy.data) v = static_cast<float>(v + proxy_sigma * rng.normal());
    proxy.clamp();
  }
  EditContext ctx = build_context(cfg, fx.source, proxy, fx.mask, fx.instruction, nullptr, o);
  TrainExample ex;
  ex.x0 = gather_cells(encode_latent(fx.target, cfg.patch).tokens, ctx.seq.noisy_cells);
  ex.x1 = rng_normal(rng, ex.x0.shape());
  ex.t = rng.uniform();
  ex.seq = std::move(ctx.seq);
  return ex;
}

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.model.validate();
    model_ = init_model(cfg_.model, cfg_.seed, InitStyle::Training);
    model_.frozen = cfg_.freeze_base;
    for (auto& p : named_params(model_)) p.tensor->set_requires_grad(is_trainable(model_, p));
    opt_ = make_optimizer(model_);
    data_ = synthetic_dataset(cfg_.data_seed, cfg_.dataset_size, cfg_.data);
  }

  // Continue from a checkpoint written by this trainer.
  Trainer(TrainConfig cfg, Checkpoint ck) : cfg_(std::move(cfg)) {
    cfg_.model = ck.model.config;
    model_ = std::move(ck.model);
    opt_ = std::move(ck.optimizer);
    data_ = synthetic_dataset(cfg_.data_seed, cfg_.dataset_size, cfg_.data);
  }

  ContextOptions context_options() const {
    ContextOptions o;
    o.window = cfg_.model.window;
    o.halo = cfg_.model.halo;
    o.proxy_factor = cfg_.data.proxy_factor;
    return o;
  }

  std::vector<TrainExample> batch_for(long step) const {
    Rng rng = Rng(cfg_.seed).fork(static_cast<std::uint64_t>(step));
    std::vector<TrainExample> batch;
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      const auto& fx = data_[rng.below(data_.size())];
      batch.push_back(make_example(cfg_.model, fx, rng, context_options(), cfg_.proxy_sigma));
    }
    return batch;
  }

  StepReport step() { return train_step(model_, batch_for(opt_.step), opt_, cfg_.adam); }

  const ModelParams& model() const { return model_; }
  ModelParams& model() { return model_; }
  const OptimizerState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<SyntheticFixture>& dataset() const { return data_; }

  std::map<std::string, std::string> meta() const {
    return {{"data_seed", std::to_string(cfg_.data_seed)}, {"seed", std::to_string(cfg_.seed)},
            {"dataset_size", std::to_string(cfg_.dataset_size)}, {"image_size", std::to_string(cfg_.data.size)},
            {"proxy_factor", std::to_string(cfg_.data.proxy_factor)}};
  }
  void save(const std::filesystem::path& dir) const { save_checkpoint(dir, model_, opt_, meta()); }

 private:
  TrainConfig cfg_;
  ModelParams model_;
  OptimizerState opt_;
  std::vector<SyntheticFixture> data_;
};

}  // namespace hieredit
