// SPDX-License-Identifier: Apache-2.0
//
// Timing sweeps over edit ratio and resolution, plus analytic FLOP columns.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hieredit/attention/flops.hpp"
#include "hieredit/bench/csv.hpp"
#include "hieredit/bench/stats.hpp"
#include "hieredit/pipeline/config.hpp"
#include "hieredit/pipeline/edit.hpp"
#include "hieredit/pipeline/synthetic.hpp"

namespace hieredit {

struct Variant {
  std::string name;
  bool lwa = true, fc = true, ti = true;
};

inline Variant full_variant() { return {"full", true, true, true}; }
inline Variant dense_variant() { return {"dense", false, false, false}; }

// "full" with the listed components switched off, e.g. {"lwa", "ti"} -> no_lwa_ti.
inline Variant ablated_variant(const std::vector<std::string>& off) {
  Variant v = full_variant();
  if (off.empty()) return v;
  v.name = "no";
  for (const auto& o : off) {
    if (o == "lwa") {
      v.lwa = false;
    } else if (o == "fc") {
      v.fc = false;
    } else if (o == "ti") {
      v.ti = false;
    } else {
      throw ConfigError("unknown ablation component '" + o + "' (expected lwa, fc or ti)");
    }
    v.name += "_" + o;
  }
  return v;
}

inline void apply_variant(EditConfig& c, const Variant& v) {
  c.lwa = v.lwa;
  c.fc = v.fc;
  c.ti = v.ti;
}

// Number of active windows for a target edit ratio; at least one.
inline std::size_t windows_for_ratio(std::size_t total, double ratio) {
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ratio * static_cast<double>(total))), 1, total);
}

// Pixel mask covering the first `active` windows in row-major order.
inline PixelMask window_band_mask(std::size_t size_px, std::size_t patch, std::size_t window, std::size_t active) {
  const std::size_t cell = patch * window;
  if (size_px % cell != 0) throw ConfigError("bench resolution must be a multiple of patch x window");
  const std::size_t per_row = size_px / cell;
  PixelMask m(size_px, size_px);
  for (std::size_t w = 0; w < active; ++w) {
    const std::size_t wy = w / per_row, wx = w % per_row;
    for (std::size_t y = wy * cell; y < (wy + 1) * cell; ++y)
      for (std::size_t x = wx * cell; x < (wx + 1) * cell; ++x) m.set(x, y);
  }
  return m;
}

struct BenchRow {
  std::size_t resolution = 0;  // pixels per side
  std::size_t grid = 0;        // tokens per side
  double edit_ratio = 0;       // requested
  double mask_fraction = 0;    // realised
  std::string variant;
  std::size_t threads = 1;
  std::size_t repetitions = 0;
  double min_ms = 0;  // best of the repetitions; trend fits use this
  double median_ms = 0, p10_ms = 0, p90_ms = 0;
  std::uint64_t flops_dense = 0, flops_windowed = 0;
  std::size_t active_windows = 0, total_windows = 0;
  std::uint64_t ref_flops_dense = 0, ref_flops_windowed = 0;
  double ref_ratio = 0;
};

inline std::vector<std::string> bench_header() {
  return {"resolution",   "grid",          "edit_ratio",     "mask_fraction",   "variant",
          "threads",      "repetitions",   "min_ms",         "median_ms",      "p10_ms",          "p90_ms",
          "flops_dense",  "flops_windowed", "active_windows", "total_windows",  "ref_flops_dense",
          "ref_flops_windowed", "ref_ratio"};
}

inline std::vector<std::string> to_csv_row(const BenchRow& r) {
  return {std::to_string(r.resolution),        std::to_string(r.grid),
          csv_number(r.edit_ratio),            csv_number(r.mask_fraction),
          r.variant,                           std::to_string(r.threads),
          std::to_string(r.repetitions),       csv_number(r.min_ms),
          csv_number(r.median_ms),
          csv_number(r.p10_ms),                csv_number(r.p90_ms),
          std::to_string(r.flops_dense),       std::to_string(r.flops_windowed),
          std::to_string(r.active_windows),    std::to_string(r.total_windows),
          std::to_string(r.ref_flops_dense), std::to_string(r.ref_flops_windowed),
          csv_number(r.ref_ratio)};
}

// Reference geometry for the analytic columns: 256 x 256 tokens, 16 x 16
// windows, no halo, head dim 128.
struct ReferenceGeometry {
  std::size_t grid = 256;
  long window = 16;
  long halo = 0;
  std::uint64_t head_dim = 128;
};

inline FlopReport reference_flops(double ratio, const ReferenceGeometry& g = {}) {
  const std::size_t per_side = g.grid / static_cast<std::size_t>(g.window);
  return flop_count(g.grid, g.grid, g.window, g.halo, windows_for_ratio(per_side * per_side, ratio), g.head_dim);
}

// One timed configuration. The proxy equals the downsampled source, so the
// edit region is exactly the supplied window band.
struct BenchPoint {
  BenchRow row;
  EditRequest request;
};

inline BenchPoint prepare_point(const ModelParams& model, std::size_t size_px, double ratio, const Variant& variant,
                                const BenchConfig& bc, const EditConfig& base, std::uint64_t seed = 17) {
  const ModelConfig& mc = model.config;
  if (size_px % (mc.patch * base.window) != 0 || size_px % base.proxy_factor != 0) {
    throw ConfigError("bench resolution " + std::to_string(size_px) +
                      " must be a multiple of patch x window and of the proxy factor");
  }
  BenchPoint p;
  BenchRow& row = p.row;
  const std::size_t grid = size_px / mc.patch;
  row.resolution = size_px;
  row.grid = grid;
  row.edit_ratio = ratio;
  row.variant = variant.name;
  row.threads = base.threads;
  row.repetitions = bc.repetitions;

  const std::size_t per_row = grid / base.window;
  row.total_windows = per_row * per_row;
  row.active_windows = windows_for_ratio(row.total_windows, ratio);
  const FlopReport fr = flop_count(grid, grid, static_cast<long>(base.window), static_cast<long>(base.halo),
                                   row.active_windows, mc.head_dim);
  row.flops_dense = fr.dense_flops;
  row.flops_windowed = fr.windowed_flops;
  const FlopReport pf = reference_flops(ratio);
  row.ref_flops_dense = pf.dense_flops;
  row.ref_flops_windowed = pf.windowed_flops;
  row.ref_ratio = pf.ratio;

  SyntheticOptions so;
  so.size = size_px;
  so.proxy_factor = base.proxy_factor;
  Rng rng(seed);
  const SyntheticFixture fx = synthetic_fixture(rng, so, 0.3, EditKind::Recolor);
  EditRequest& req = p.request;
  req.source = fx.source;
  req.instruction = fx.instruction;
  req.proxy = downsample(fx.source, base.proxy_factor);
  req.user_mask = window_band_mask(size_px, mc.patch, base.window, row.active_windows);
  req.config = base;
  req.config.total_steps = bc.steps;
  req.config.executed_steps = bc.steps;
  apply_variant(req.config, variant);
  row.mask_fraction = req.user_mask->fraction();
  return p;
}

// Times the sampling stage of every point. Repetitions are interleaved
// across points so slow drift of the machine lands on all of them alike, and
// each round visits the points in a fresh seeded order so periodic
// interference cannot lock onto one of them.
inline std::vector<BenchRow> time_points(const ModelParams& model, std::vector<BenchPoint>& points,
                                         const BenchConfig& bc) {
  for (std::size_t i = 0; i < bc.warmup; ++i)
    for (auto& p : points) run_edit(p.request, model);
  std::vector<std::vector<double>> ms(points.size());
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 shuffle_rng(12345);
  for (std::size_t rep = 0; rep < bc.repetitions; ++rep) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t i : order) ms[i].push_back(run_edit(points[i].request, model).ms.sampling);
  }
  std::vector<BenchRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Summary s = summarize(ms[i]);
    points[i].row.min_ms = s.min;
    points[i].row.median_ms = s.median;
    points[i].row.p10_ms = s.p10;
    points[i].row.p90_ms = s.p90;
    rows.push_back(points[i].row);
  }
  return rows;
}

inline std::vector<BenchRow> run_bench(const ModelParams& model, const BenchConfig& bc, const EditConfig& base,
                                       const std::vector<Variant>& variants) {
  bc.validate();
  std::vector<BenchRow> rows;
  for (std::size_t res : bc.resolutions)
    for (const auto& v : variants) {
      std::vector<BenchPoint> points;
      for (double r : bc.edit_ratios) points.push_back(prepare_point(model, res, r, v, bc, base));
      for (auto& row : time_points(model, points, bc)) rows.push_back(std::move(row));
    }
  return rows;
}

struct TrendFit {
  LinearFit fit;
  double relative_slope = 0;  // slope / intercept, per unit edit ratio
};

// Fit of best-of-N time against edit ratio for one (resolution, variant)
// series. Interference on a shared host only ever adds time, and it comes in
// phases long enough to drag a whole median along, so the minimum is the
// stable estimate of the work itself.
inline TrendFit fit_trend(const std::vector<BenchRow>& rows, std::size_t resolution, const std::string& variant) {
  std::vector<double> x, y;
  for (const auto& r : rows)
    if (r.resolution == resolution && r.variant == variant) {
      x.push_back(r.edit_ratio);
      y.push_back(r.min_ms);
    }
  TrendFit t;
  t.fit = fit_line(x, y);
  t.relative_slope = t.fit.intercept != 0.0 ? t.fit.slope / t.fit.intercept : 0.0;
  return t;
}

}  // namespace hieredit
