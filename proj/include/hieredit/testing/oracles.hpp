// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used by the test suites and `hieredit selftest`.
// They share no code with the kernels they check: plain loops, long double
// accumulation, no masking shortcuts.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "hieredit/numerics/tensor.hpp"

namespace hieredit::oracle {

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a.at(i, p)) * b.at(p, j);
      out[i * n + j] = static_cast<float>(s);
    }
  return Tensor({m, n}, std::move(out));
}

inline std::vector<long double> softmax_extended(const std::vector<long double>& x) {
  long double mx = -std::numeric_limits<long double>::infinity();
  for (auto v : x) mx = std::max(mx, v);
  std::vector<long double> out(x.size());
  long double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= total;
  return out;
}

struct NaiveAttention {
  Tensor out;
  std::vector<std::uint8_t> has_keys;
};

// Per-pair attention: for query i only keys j with allow(i, j) enter the
// softmax. Rows without any allowed key are left zero.
inline NaiveAttention naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                      const std::function<bool(std::size_t, std::size_t)>& allow) {
  const std::size_t n = q.dim(0), width = q.dim(1), dh = width / heads;
  NaiveAttention res{Tensor({n, width}), std::vector<std::uint8_t>(n, 0)};
  float* o = res.out.mutable_ptr();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> keys;
    for (std::size_t j = 0; j < n; ++j)
      if (allow(i, j)) keys.push_back(j);
    if (keys.empty()) continue;
    res.has_keys[i] = 1;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<long double> scores;
      for (auto j : keys) {
        long double dot = 0;
        for (std::size_t d = 0; d < dh; ++d) dot += static_cast<long double>(q.at(i, h * dh + d)) * k.at(j, h * dh + d);
        scores.push_back(dot / std::sqrt(static_cast<long double>(dh)));
      }
      const auto p = softmax_extended(scores);
      for (std::size_t d = 0; d < dh; ++d) {
        long double acc = 0;
        for (std::size_t t = 0; t < keys.size(); ++t) acc += p[t] * v.at(keys[t], h * dh + d);
        o[i * width + h * dh + d] = static_cast<float>(acc);
      }
    }
  }
  return res;
}

struct GradCheckResult {
  std::vector<double> relative_error;  // per input, ||analytic - numeric|| / max(norms)
  std::vector<std::vector<float>> analytic;
  std::vector<std::vector<double>> numeric;
  double max_relative_error() const {
    double m = 0.0;
    for (double e : relative_error) m = std::max(m, e);
    return m;
  }
};

// Central finite differences against the tape gradient. `fn` must build a
// scalar from its inputs using differentiable ops only. Inputs flagged in
// `frozen` do not require a gradient and are not differenced; their analytic
// entry is whatever the tape left behind, which should be all zero.
// `five_point` switches to the fourth-order stencil, which tolerates the
// larger steps needed when float rounding in a deep graph swamps small ones.
inline GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                       const std::vector<Tensor>& inputs, double eps = 1e-3,
                                       const std::vector<bool>& frozen = {}, bool five_point = false) {
  GradCheckResult res;
  {
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      leaves.push_back(inputs[i].clone());
      leaves.back().set_requires_grad(frozen.empty() || !frozen[i]);
    }
    Tape tape;
    const Tensor loss = fn(leaves);
    tape.backward(loss);
    for (const auto& l : leaves) res.analytic.push_back(l.grad());
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!frozen.empty() && frozen[i]) {
      res.relative_error.push_back(0.0);
      res.numeric.emplace_back();
      continue;
    }
    std::vector<double> num(inputs[i].numel());
    for (std::size_t e = 0; e < inputs[i].numel(); ++e) {
      // Difference over the step actually representable in float.
      const float hi = static_cast<float>(inputs[i][e] + eps);
      const float lo = static_cast<float>(inputs[i][e] - eps);
      auto eval = [&](float value) {
        std::vector<Tensor> xs;
        for (const auto& t : inputs) xs.push_back(t.clone());
        xs[i].mutable_data()[e] = value;
        return static_cast<double>(fn(xs)[0]);
      };
      if (five_point) {
        const float hi2 = static_cast<float>(inputs[i][e] + 2 * eps);
        const float lo2 = static_cast<float>(inputs[i][e] - 2 * eps);
        const double h = (static_cast<double>(hi2) - static_cast<double>(lo2)) / 4.0;
        num[e] = (-eval(hi2) + 8.0 * eval(hi) - 8.0 * eval(lo) + eval(lo2)) / (12.0 * h);
      } else {
        num[e] = (eval(hi) - eval(lo)) / (static_cast<double>(hi) - static_cast<double>(lo));
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t e = 0; e < num.size(); ++e) {
      const double a = res.analytic[i][e];
      diff += (a - num[e]) * (a - num[e]);
      na += a * a;
      nn += num[e] * num[e];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    res.relative_error.push_back(std::sqrt(diff) / denom);
    res.numeric.push_back(std::move(num));
  }
  return res;
}

}  // namespace hieredit::oracle
