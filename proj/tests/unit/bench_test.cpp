// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hieredit/bench/ablation.hpp"
#include "hieredit/bench/csv.hpp"
#include "hieredit/bench/runner.hpp"
#include "hieredit/bench/stats.hpp"
#include "hieredit/bench/svg.hpp"

using namespace hieredit;

TEST(Stats, PercentileInterpolatesLinearly) {
  const std::vector<double> xs{4, 1, 3, 2, 5};
  EXPECT_DOUBLE_EQ(percentile(xs, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile(xs, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile(xs, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(percentile(xs, 0.1), 1.4);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_THROW(percentile({}, 0.5), ContractError);
  EXPECT_THROW(percentile({1.0}, 1.5), ContractError);
}

TEST(Stats, FitLineRecoversExactLine) {
  std::vector<double> x, y;
  for (int i = 0; i < 6; ++i) {
    x.push_back(i * 0.2);
    y.push_back(3.0 * x.back() - 1.0);
  }
  const LinearFit f = fit_line(x, y);
  EXPECT_NEAR(f.slope, 3.0, 1e-12);
  EXPECT_NEAR(f.intercept, -1.0, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  const LinearFit flat = fit_line({0, 1, 2}, {5, 5, 5});
  EXPECT_DOUBLE_EQ(flat.slope, 0.0);
  EXPECT_DOUBLE_EQ(flat.r2, 1.0);
  EXPECT_THROW(fit_line({1, 1}, {0, 1}), ContractError);
}

TEST(Stats, FitLineR2MatchesHandComputation) {
  // y = 0, 2, 1, 3 over x = 0..3: slope 0.8, intercept 0.3, R^2 = 0.64.
  const LinearFit f = fit_line({0, 1, 2, 3}, {0, 2, 1, 3});
  EXPECT_NEAR(f.slope, 0.8, 1e-12);
  EXPECT_NEAR(f.intercept, 0.3, 1e-12);
  EXPECT_NEAR(f.r2, 0.64, 1e-12);
}

TEST(Csv, QuotingRoundTrips) {
  CsvTable t({"name", "value"});
  t.add({"plain", "1"});
  t.add({"with,comma", "say \"hi\""});
  t.add({"line\nbreak", ""});
  const std::string s = t.str();
  EXPECT_NE(s.find("\"with,comma\",\"say \"\"hi\"\"\"\r\n"), std::string::npos);
  const auto back = parse_csv(s);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[0], t.header());
  for (std::size_t i = 0; i < t.rows().size(); ++i) EXPECT_EQ(back[i + 1], t.rows()[i]);
  EXPECT_THROW(t.add({"only one"}), ContractError);
}

TEST(Csv, NumbersUseSixSignificantDigits) {
  EXPECT_EQ(csv_number(0.1), "0.1");
  EXPECT_EQ(csv_number(1234567.0), "1.23457e+06");
  EXPECT_EQ(csv_number(2.0), "2");
}

TEST(Svg, ChartContainsSeriesAndEscapedLabels) {
  const std::string svg =
      line_chart_svg({{"full", {10, 50, 90}, {1, 2, 3}}, {"a<b", {10, 90}, {2, 2}}}, {"t & u", "x", "y"});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("t &amp; u"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
}

TEST(Runner, AblatedVariantNames) {
  EXPECT_EQ(ablated_variant({}).name, "full");
  const Variant v = ablated_variant({"lwa", "ti"});
  EXPECT_EQ(v.name, "no_lwa_ti");
  EXPECT_FALSE(v.lwa);
  EXPECT_TRUE(v.fc);
  EXPECT_FALSE(v.ti);
  EXPECT_THROW(ablated_variant({"xyz"}), ConfigError);
  EditConfig c;
  apply_variant(c, dense_variant());
  EXPECT_FALSE(c.lwa || c.fc || c.ti);
}

TEST(Runner, WindowBandCoversExactlyTheRequestedWindows) {
  // 64 px, patch 4, window 4: 4 x 4 windows of 16 px.
  EXPECT_EQ(windows_for_ratio(16, 0.01), 1u);
  EXPECT_EQ(windows_for_ratio(16, 0.5), 8u);
  EXPECT_EQ(windows_for_ratio(16, 1.0), 16u);
  for (std::size_t k = 1; k <= 16; ++k) {
    const PixelMask m = window_band_mask(64, 4, 4, k);
    EXPECT_EQ(m.count(), k * 256);
    const WindowActivation act = mask_to_windows(m, 4, 4);
    EXPECT_EQ(act.count(), k);
    EXPECT_TRUE(act.at((k - 1) / 4, (k - 1) % 4));
  }
  EXPECT_THROW(window_band_mask(60, 4, 4, 1), ConfigError);
}

TEST(Runner, ReferenceGeometryFlops) {
  EXPECT_DOUBLE_EQ(reference_flops(1.0).ratio, 256.0);
  EXPECT_GT(reference_flops(0.1).ratio, reference_flops(0.9).ratio);
}

TEST(Runner, BenchRowsCarryAnalyticColumns) {
  ModelConfig mc = toy_model_config();
  mc.layers = 1;
  const ModelParams model = init_model(mc, 3, InitStyle::Random);
  BenchConfig bc;
  bc.resolutions = {32};
  bc.edit_ratios = {0.25, 1.0};
  bc.warmup = 0;
  bc.steps = 1;
  const auto rows = run_bench(model, bc, EditConfig{}, {full_variant(), dense_variant()});
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.grid, 8u);
    EXPECT_EQ(r.total_windows, 4u);
    EXPECT_EQ(r.repetitions, 3u);
    EXPECT_LE(r.min_ms, r.p10_ms);
    EXPECT_LE(r.p10_ms, r.median_ms);
    EXPECT_LE(r.median_ms, r.p90_ms);
    EXPECT_GE(r.flops_dense, r.flops_windowed);
    EXPECT_EQ(to_csv_row(r).size(), bench_header().size());
  }
  EXPECT_EQ(rows[0].active_windows, 1u);
  EXPECT_DOUBLE_EQ(rows[0].mask_fraction, 0.25);
  EXPECT_EQ(rows[1].active_windows, 4u);
  EXPECT_THROW(prepare_point(model, 36, 0.5, full_variant(), bc, EditConfig{}), ConfigError);
}

TEST(Ablation, KneeIsLowestErrorAndRiseMustBeStrict) {
  auto rows = [](std::vector<double> e) {
    std::vector<SkipRow> r;
    for (std::size_t i = 0; i < e.size(); ++i) r.push_back({i * 4, 28 - i * 4, e[i], 0});
    return r;
  };
  SkipReport a = analyse_skips(rows({0.5, 0.3, 0.2, 0.25, 0.4}));
  EXPECT_EQ(a.knee_index, 2u);
  EXPECT_EQ(a.knee(), 8u);
  EXPECT_TRUE(a.increases_beyond_knee);
  EXPECT_FALSE(analyse_skips(rows({0.5, 0.2, 0.3, 0.3})).increases_beyond_knee);
  EXPECT_FALSE(analyse_skips(rows({0.5, 0.4, 0.3})).increases_beyond_knee);
}

TEST(Ablation, MaskedMseOnlyCountsMaskedPixels) {
  PixelImage a(4, 4), b(4, 4);
  PixelMask m(4, 4);
  b.at(0, 0, 0) = 1.0f;  // outside the mask
  b.at(1, 1, 0) = 0.5f;
  m.set(1, 1);
  m.set(2, 2);
  // Two masked pixels, three channels: (0.25 + 0) / 6.
  EXPECT_NEAR(masked_mse(a, b, m), 0.25 / 6.0, 1e-9);
}
