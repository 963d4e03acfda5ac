// SPDX-License-Identifier: Apache-2.0
//
// AdamW over the trainable parameters and on-disk checkpoints.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hieredit/mmdit/forward_graph.hpp"
#include "hieredit/numerics/hten.hpp"

namespace hieredit {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;         // global gradient norm; 0 disables
  double divergence_loss = 1e4;
};

// Moments per named parameter, same order as named_params.
struct OptimizerState {
  long step = 0;
  std::vector<std::vector<float>> m, v;
};

struct TrainExample {
  AssembledSequence seq;
  Tensor x0;  // clean latent of the noisy tokens
  Tensor x1;  // noise
  double t = 0.5;
};

struct StepReport {
  double loss = 0.0;
  double grad_norm = 0.0;
};

inline OptimizerState make_optimizer(const ModelParams& m) {
  OptimizerState s;
  for (const auto& p : named_params(m)) {
    s.m.emplace_back(p.tensor->numel(), 0.0f);
    s.v.emplace_back(p.tensor->numel(), 0.0f);
  }
  return s;
}

// One AdamW update on the mean flow-matching loss of `batch`.
inline StepReport train_step(ModelParams& model, const std::vector<TrainExample>& batch, OptimizerState& opt,
                             const AdamWConfig& cfg) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  auto params = named_params(model);
  if (opt.m.size() != params.size()) throw ContractError("train_step: optimizer state does not match the model");
  for (auto& p : params) {
    p.tensor->zero_grad();
    p.tensor->set_requires_grad(is_trainable(model, p));
  }
  StepReport rep;
  {
    Tape tape;
    Tensor total;
    try {
      for (const auto& ex : batch) {
        const Tensor l = flow_matching_loss(model, ex.seq, ex.x0, ex.x1, ex.t);
        total = total.numel() == 0 ? l : add(total, l);
      }
    } catch (const NumericError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(opt.step + 1), opt.step + 1);
    }
    const Tensor loss = scale(total, 1.0f / static_cast<float>(batch.size()));
    rep.loss = loss[0];
    if (!std::isfinite(rep.loss) || rep.loss > cfg.divergence_loss) {
      throw DivergenceError("loss " + std::to_string(rep.loss) + " at step " + std::to_string(opt.step + 1), opt.step + 1);
    }
    tape.backward(loss);
  }
  double sq = 0.0;
  for (auto& p : params)
    if (is_trainable(model, p) && p.tensor->has_grad())
      for (float g : p.tensor->grad()) sq += static_cast<double>(g) * g;
  rep.grad_norm = std::sqrt(sq);
  const double clip = (cfg.clip_norm > 0.0 && rep.grad_norm > cfg.clip_norm) ? cfg.clip_norm / rep.grad_norm : 1.0;

  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!is_trainable(model, p)) continue;
    const std::vector<float> g = p.tensor->grad();
    auto w = p.tensor->mutable_data();
    auto& m = opt.m[i];
    auto& v = opt.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = static_cast<float>(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk);
      v[k] = static_cast<float>(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk);
      const double upd = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.eps);
      w[k] = static_cast<float>(w[k] - cfg.lr * (upd + cfg.weight_decay * w[k]));
    }
    p.tensor->zero_grad();
  }
  return rep;
}

// Checkpoint directory: one HTEN file per parameter and per Adam moment, plus
// a key=value manifest.
struct Checkpoint {
  ModelParams model;
  OptimizerState optimizer;
  std::map<std::string, std::string> meta;  // free-form extras (seed, data settings)
};

namespace detail {

inline std::map<std::string, std::string> config_fields(const ModelConfig& c) {
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  return {{"layers", std::to_string(c.layers)},       {"heads", std::to_string(c.heads)},
          {"head_dim", std::to_string(c.head_dim)},   {"ffn_mult", std::to_string(c.ffn_mult)},
          {"text_vocab", std::to_string(c.text_vocab)}, {"lora_rank", std::to_string(c.lora_rank)},
          {"lora_alpha", num(c.lora_alpha)},          {"window", std::to_string(c.window)},
          {"halo", std::to_string(c.halo)},           {"patch", std::to_string(c.patch)},
          {"channels", std::to_string(c.channels)},   {"time_freqs", std::to_string(c.time_freqs)},
          {"rope_base", num(c.rope_base)}};
}

inline ModelConfig config_from_fields(const std::map<std::string, std::string>& f) {
  ModelConfig c;
  auto get = [&](const char* k) -> const std::string& {
    auto it = f.find(std::string("model.") + k);
    if (it == f.end()) throw IoError(std::string("checkpoint manifest lacks model.") + k);
    return it->second;
  };
  auto sz = [&](const char* k) { return static_cast<std::size_t>(std::stoull(get(k))); };
  c.layers = sz("layers");
  c.heads = sz("heads");
  c.head_dim = sz("head_dim");
  c.ffn_mult = sz("ffn_mult");
  c.text_vocab = sz("text_vocab");
  c.lora_rank = sz("lora_rank");
  c.lora_alpha = std::stod(get("lora_alpha"));
  c.window = sz("window");
  c.halo = sz("halo");
  c.patch = sz("patch");
  c.channels = sz("channels");
  c.time_freqs = sz("time_freqs");
  c.rope_base = std::stod(get("rope_base"));
  return c;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const ModelParams& m, const OptimizerState& opt,
                            const std::map<std::string, std::string>& meta = {}) {
  std::filesystem::create_directories(dir);
  const auto params = named_params(m);
  for (std::size_t i = 0; i < params.size(); ++i) {
    hten::save(*params[i].tensor, dir / (params[i].name + ".hten"));
    if (i < opt.m.size()) {
      hten::save(Tensor(params[i].tensor->shape(), opt.m[i]), dir / ("adam_m." + params[i].name + ".hten"));
      hten::save(Tensor(params[i].tensor->shape(), opt.v[i]), dir / ("adam_v." + params[i].name + ".hten"));
    }
  }
  std::ofstream f(dir / "manifest.txt");
  if (!f) throw IoError("cannot write " + (dir / "manifest.txt").string());
  f << "format=hieredit-checkpoint-1\n";
  f << "step=" << opt.step << "\n";
  f << "frozen=" << (m.frozen ? 1 : 0) << "\n";
  for (const auto& [k, v] : detail::config_fields(m.config)) f << "model." << k << "=" << v << "\n";
  for (const auto& [k, v] : meta) f << "meta." << k << "=" << v << "\n";
  if (!f) throw IoError("short write to manifest");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.txt");
  if (!f) throw IoError("no checkpoint manifest in " + dir.string());
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (fields["format"] != "hieredit-checkpoint-1") throw IoError("unknown checkpoint format in " + dir.string());
  Checkpoint ck;
  ck.model = init_model(detail::config_from_fields(fields), 0);
  ck.model.frozen = fields["frozen"] != "0";
  ck.optimizer = make_optimizer(ck.model);
  ck.optimizer.step = std::stol(fields["step"]);
  auto params = named_params(ck.model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto load_as = [&](const std::string& file, const Shape& shape) {
      Tensor t = hten::load(dir / file);
      if (t.shape() != shape) throw IoError("checkpoint tensor " + file + " has shape " + shape_str(t.shape()));
      return t;
    };
    Tensor w = load_as(params[i].name + ".hten", params[i].tensor->shape());
    w.set_requires_grad(is_trainable(ck.model, params[i]));
    *params[i].tensor = w;
    if (std::filesystem::exists(dir / ("adam_m." + params[i].name + ".hten"))) {
      const Tensor am = load_as("adam_m." + params[i].name + ".hten", w.shape());
      const Tensor av = load_as("adam_v." + params[i].name + ".hten", w.shape());
      ck.optimizer.m[i].assign(am.data().begin(), am.data().end());
      ck.optimizer.v[i].assign(av.data().begin(), av.data().end());
    }
  }
  for (const auto& [k, v] : fields)
    if (k.rfind("meta.", 0) == 0) ck.meta[k.substr(5)] = v;
  return ck;
}

}  // namespace hieredit
