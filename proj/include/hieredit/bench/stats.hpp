// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "hieredit/error.hpp"

namespace hieredit {

// Linear-interpolated percentile, q in [0, 1] (the "linear" method of most
// statistics packages).
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ContractError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("percentile: q outside [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

struct Summary {
  double min = 0, median = 0, p10 = 0, p90 = 0;
};

inline Summary summarize(const std::vector<double>& xs) {
  return {percentile(xs, 0.0), percentile(xs, 0.5), percentile(xs, 0.1), percentile(xs, 0.9)};
}

struct LinearFit {
  double slope = 0, intercept = 0;
  double r2 = 0;  // 1 when y is exactly linear, including constant y
};

// Ordinary least squares y = slope * x + intercept.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_line needs two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("fit_line: x is constant");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ssr += e * e;
  }
  f.r2 = syy == 0.0 ? 1.0 : 1.0 - ssr / syy;
  return f;
}

}  // namespace hieredit
