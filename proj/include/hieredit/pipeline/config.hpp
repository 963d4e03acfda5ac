// SPDX-License-Identifier: Apache-2.0
//
// key=value configuration. Blank lines and lines starting with '#' are
// ignored; unknown keys are errors. See README for the schema.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hieredit/pipeline/edit.hpp"
#include "hieredit/pipeline/training.hpp"

namespace hieredit {

struct BenchConfig {
  std::vector<std::size_t> resolutions{64, 96};  // pixels per side
  std::vector<double> edit_ratios{0.10, 0.25, 0.50, 0.75, 0.90};
  std::size_t repetitions = 3;
  std::size_t warmup = 1;
  std::size_t steps = 4;  // sampling steps per timed run

  void validate() const {
    if (repetitions < 3) throw ConfigError("bench.repetitions must be at least 3");
    if (resolutions.empty() || edit_ratios.empty()) throw ConfigError("bench needs at least one resolution and one ratio");
    for (double r : edit_ratios)
      if (!(r > 0.0 && r <= 1.0)) throw ConfigError("bench.edit_ratios must lie in (0, 1]");
    if (steps == 0) throw ConfigError("bench.steps must be positive");
  }
};

struct Config {
  TrainConfig train;
  EditConfig edit;
  BenchConfig bench;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(x)) {
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

template <class T, class Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

using Setter = std::function<void(Config&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& config_schema() {
  static const std::map<std::string, Setter> schema = [] {
    std::map<std::string, Setter> s;
    auto size = [&](const std::string& k, auto member) {
      s[k] = [member](Config& c, const std::string& key, const std::string& v) { member(c) = parse_size(key, v); };
    };
    auto real = [&](const std::string& k, auto member) {
      s[k] = [member](Config& c, const std::string& key, const std::string& v) { member(c) = parse_double(key, v); };
    };
    auto flag = [&](const std::string& k, auto member) {
      s[k] = [member](Config& c, const std::string& key, const std::string& v) { member(c) = parse_bool(key, v); };
    };
    size("model.layers", [](Config& c) -> std::size_t& { return c.train.model.layers; });
    size("model.heads", [](Config& c) -> std::size_t& { return c.train.model.heads; });
    size("model.head_dim", [](Config& c) -> std::size_t& { return c.train.model.head_dim; });
    size("model.ffn_mult", [](Config& c) -> std::size_t& { return c.train.model.ffn_mult; });
    size("model.text_vocab", [](Config& c) -> std::size_t& { return c.train.model.text_vocab; });
    size("model.lora_rank", [](Config& c) -> std::size_t& { return c.train.model.lora_rank; });
    real("model.lora_alpha", [](Config& c) -> double& { return c.train.model.lora_alpha; });
    size("model.window", [](Config& c) -> std::size_t& { return c.train.model.window; });
    size("model.halo", [](Config& c) -> std::size_t& { return c.train.model.halo; });
    size("model.patch", [](Config& c) -> std::size_t& { return c.train.model.patch; });
    size("model.time_freqs", [](Config& c) -> std::size_t& { return c.train.model.time_freqs; });

    size("train.steps", [](Config& c) -> std::size_t& { return c.train.steps; });
    size("train.batch", [](Config& c) -> std::size_t& { return c.train.batch; });
    real("train.lr", [](Config& c) -> double& { return c.train.adam.lr; });
    real("train.weight_decay", [](Config& c) -> double& { return c.train.adam.weight_decay; });
    real("train.clip_norm", [](Config& c) -> double& { return c.train.adam.clip_norm; });
    s["train.seed"] = [](Config& c, const std::string& k, const std::string& v) { c.train.seed = parse_size(k, v); };
    s["train.data_seed"] = [](Config& c, const std::string& k, const std::string& v) {
      c.train.data_seed = parse_size(k, v);
    };
    size("train.dataset_size", [](Config& c) -> std::size_t& { return c.train.dataset_size; });
    size("train.image_size", [](Config& c) -> std::size_t& { return c.train.data.size; });
    flag("train.freeze_base", [](Config& c) -> bool& { return c.train.freeze_base; });
    real("train.proxy_sigma", [](Config& c) -> double& { return c.train.proxy_sigma; });
    size("train.log_every", [](Config& c) -> std::size_t& { return c.log_every; });
    size("train.checkpoint_every", [](Config& c) -> std::size_t& { return c.checkpoint_every; });

    size("edit.window", [](Config& c) -> std::size_t& { return c.edit.window; });
    size("edit.halo", [](Config& c) -> std::size_t& { return c.edit.halo; });
    size("edit.total_steps", [](Config& c) -> std::size_t& { return c.edit.total_steps; });
    size("edit.executed_steps", [](Config& c) -> std::size_t& { return c.edit.executed_steps; });
    real("edit.alpha", [](Config& c) -> double& { return c.edit.alpha; });
    real("edit.tau", [](Config& c) -> double& { return c.edit.mask.tau; });
    size("edit.dilation", [](Config& c) -> std::size_t& { return c.edit.mask.dilation; });
    size("edit.min_component", [](Config& c) -> std::size_t& { return c.edit.mask.min_component; });
    size("edit.feather", [](Config& c) -> std::size_t& { return c.edit.feather; });
    size("edit.proxy_factor", [](Config& c) -> std::size_t& { return c.edit.proxy_factor; });
    real("edit.sharpen_sigma", [](Config& c) -> double& { return c.edit.sharpen.sigma; });
    real("edit.sharpen_amount", [](Config& c) -> double& { return c.edit.sharpen.amount; });
    s["edit.seed"] = [](Config& c, const std::string& k, const std::string& v) { c.edit.seed = parse_size(k, v); };
    size("edit.threads", [](Config& c) -> std::size_t& { return c.edit.threads; });
    flag("edit.anchors", [](Config& c) -> bool& { return c.edit.anchors; });
    s["edit.init"] = [](Config& c, const std::string& k, const std::string& v) {
      if (v == "intermediate") {
        c.edit.init = InitMode::Intermediate;
      } else if (v == "noise") {
        c.edit.init = InitMode::Noise;
      } else {
        throw ConfigError("config key '" + k + "': expected 'intermediate' or 'noise', got '" + v + "'");
      }
    };

    s["bench.resolutions"] = [](Config& c, const std::string& k, const std::string& v) {
      c.bench.resolutions = parse_list<std::size_t>(k, v, parse_size);
    };
    s["bench.edit_ratios"] = [](Config& c, const std::string& k, const std::string& v) {
      c.bench.edit_ratios = parse_list<double>(k, v, parse_double);
    };
    size("bench.repetitions", [](Config& c) -> std::size_t& { return c.bench.repetitions; });
    size("bench.warmup", [](Config& c) -> std::size_t& { return c.bench.warmup; });
    size("bench.steps", [](Config& c) -> std::size_t& { return c.bench.steps; });
    return s;
  }();
  return schema;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::config_schema()) keys.push_back(k);
  return keys;
}

// Applies one key=value assignment.
inline void set_config(Config& c, const std::string& key, const std::string& value) {
  const auto& schema = detail::config_schema();
  const auto it = schema.find(key);
  if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, value);
}

inline void validate_config(const Config& c) {
  c.train.model.validate();
  c.bench.validate();
  c.edit.schedule().validate();
  if (!(c.edit.alpha > 0.0 && c.edit.alpha < 1.0)) throw ConfigError("edit.alpha must lie in (0, 1)");
  if (c.train.batch == 0) throw ConfigError("train.batch must be positive");
}

inline Config parse_config(const std::string& text, Config base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    try {
      set_config(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_config(base);
  return base;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace hieredit
