// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction-error studies on synthetic fixtures: intermediate versus
// noise initialisation, and the skipped-step sweep.

#pragma once

#include <string>
#include <vector>

#include "hieredit/bench/stats.hpp"
#include "hieredit/pipeline/edit.hpp"
#include "hieredit/pipeline/synthetic.hpp"

namespace hieredit {

// Mean squared error over the pixels of `mask`, all channels.
inline double masked_mse(const PixelImage& a, const PixelImage& b, const PixelMask& mask) {
  require_same_extent(a, b, "masked_mse");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    for (std::size_t c = 0; c < a.channels; ++c) {
      const double d = static_cast<double>(a.data[i * a.channels + c]) - b.data[i * b.channels + c];
      s += d * d;
      ++n;
    }
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

inline EditRequest fixture_request(const SyntheticFixture& fx, const EditConfig& cfg) {
  EditRequest r;
  r.source = fx.source;
  r.instruction = fx.instruction;
  r.proxy = fx.proxy;
  r.config = cfg;
  return r;
}

struct InitComparison {
  std::vector<double> intermediate, noise;  // per-fixture error
  std::size_t wins = 0;                     // intermediate strictly lower
  double win_rate() const {
    return intermediate.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(intermediate.size());
  }
};

// Same seed, proxy and executed step count for both arms; the noise arm
// integrates the executed steps over the whole [0, 1] interval.
inline InitComparison compare_init(const ModelParams& model, const std::vector<SyntheticFixture>& fixtures,
                                   const EditConfig& cfg) {
  InitComparison out;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto& fx = fixtures[i];
    EditConfig c = cfg;
    c.seed = cfg.seed + i;
    c.init = InitMode::Intermediate;
    const double ei = masked_mse(run_edit(fixture_request(fx, c), model).output, fx.target, fx.mask);
    c.init = InitMode::Noise;
    const double en = masked_mse(run_edit(fixture_request(fx, c), model).output, fx.target, fx.mask);
    out.intermediate.push_back(ei);
    out.noise.push_back(en);
    out.wins += ei < en ? 1 : 0;
  }
  return out;
}

struct SkipRow {
  std::size_t skip = 0;
  std::size_t executed = 0;
  double mean_error = 0;
  double median_ms = 0;  // sampling stage
};

struct SkipReport {
  std::vector<SkipRow> rows;
  std::size_t knee_index = 0;  // lowest mean error
  bool increases_beyond_knee = false;  // strictly, and the knee is not the last point
  std::size_t knee() const { return rows.at(knee_index).skip; }
};

inline SkipReport analyse_skips(std::vector<SkipRow> rows) {
  SkipReport rep;
  rep.rows = std::move(rows);
  if (rep.rows.empty()) return rep;
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    if (rep.rows[i].mean_error < rep.rows[rep.knee_index].mean_error) rep.knee_index = i;
  rep.increases_beyond_knee = rep.knee_index + 1 < rep.rows.size();
  for (std::size_t i = rep.knee_index + 1; i < rep.rows.size(); ++i)
    rep.increases_beyond_knee &= rep.rows[i].mean_error > rep.rows[i - 1].mean_error;
  return rep;
}

// Skipped-step sweep at fixed total steps: skip k runs T - k steps from
// intermediate initialisation at t = (T - k) / T.
inline SkipReport ablate_steps(const ModelParams& model, const std::vector<SyntheticFixture>& fixtures,
                               const std::vector<std::size_t>& skips, const EditConfig& cfg) {
  std::vector<SkipRow> rows;
  for (std::size_t k : skips) {
    if (k >= cfg.total_steps) {
      throw ConfigError("skip " + std::to_string(k) + " leaves no steps out of " + std::to_string(cfg.total_steps));
    }
    SkipRow row;
    row.skip = k;
    row.executed = cfg.total_steps - k;
    std::vector<double> ms;
    double err = 0;
    for (std::size_t i = 0; i < fixtures.size(); ++i) {
      EditConfig c = cfg;
      c.init = InitMode::Intermediate;
      c.executed_steps = row.executed;
      c.seed = cfg.seed + i;
      const EditResult r = run_edit(fixture_request(fixtures[i], c), model);
      err += masked_mse(r.output, fixtures[i].target, fixtures[i].mask);
      ms.push_back(r.ms.sampling);
    }
    row.mean_error = fixtures.empty() ? 0.0 : err / static_cast<double>(fixtures.size());
    row.median_ms = ms.empty() ? 0.0 : percentile(ms, 0.5);
    rows.push_back(row);
  }
  return analyse_skips(std::move(rows));
}

}  // namespace hieredit
