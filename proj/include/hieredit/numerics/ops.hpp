// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor ops. Each op computes its value eagerly and, when a
// Tape is active and an input requires a gradient, records its backward rule.
// Reductions accumulate in double; all ops reject non-finite outputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hieredit/numerics/tensor.hpp"

namespace hieredit {

namespace kernels {

// c[m x n] = a[m x k] * b[k x n]
inline void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      // No zero skip: the cost of a product must not depend on its values.
      const double av = ai[p];
      const float* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * bp[j];
    }
    float* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = static_cast<float>(acc[j]);
  }
}

// c[m x n] = a[m x k] * b[n x k]^T, bitwise equal to gemm_nn on b transposed.
inline void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::vector<float> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k x n] = a[m x k]^T * b[m x n]
inline void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ai = a + i * k;
    const float* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* row = acc.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * bi[j];
    }
  }
  for (std::size_t i = 0; i < k * n; ++i) c[i] = static_cast<float>(acc[i]);
}

inline float silu(float x) { return static_cast<float>(x / (1.0 + std::exp(-static_cast<double>(x)))); }

// Row-wise softmax with max subtraction, in place.
inline void softmax_rows(float* x, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* row = x + i * n;
    const float mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      row[j] = static_cast<float>(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(row[j] * inv);
  }
}

inline constexpr double kRmsEps = 1e-6;

// out = x / rms(x) row-wise; returns the per-row inverse rms for backward.
inline std::vector<double> rms_norm_rows(const float* x, float* out, std::size_t m, std::size_t n) {
  std::vector<double> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* xi = x + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<double>(xi[j]) * xi[j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + kRmsEps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(xi[j] * inv[i]);
  }
  return inv;
}

}  // namespace kernels

namespace detail {

template <class Backward>
void record(Tensor& out, Backward&& fn) {
  out.set_requires_grad(true);
  Tape::current()->record(std::forward<Backward>(fn));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  kernels::gemm_nn(a.ptr(), b.ptr(), out.mutable_ptr(), m, k, n);
  detail::check_finite(out, "matmul");
  if (detail::recording({&a, &b})) {
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      auto g = detail::out_grad(on);
      if (an->requires_grad) {
        std::vector<float> da(m * k);
        kernels::gemm_nt(g.data(), bn->data.data(), da.data(), m, n, k);
        detail::accumulate(an, da);
      }
      if (bn->requires_grad) {
        std::vector<float> db(k * n);
        kernels::gemm_tn(an->data.data(), g.data(), db.data(), m, k, n);
        detail::accumulate(bn, db);
      }
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n});
  kernels::gemm_nt(a.ptr(), b.ptr(), out.mutable_ptr(), m, k, n);
  detail::check_finite(out, "matmul_nt");
  if (detail::recording({&a, &b})) {
    detail::record(out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      auto g = detail::out_grad(on);
      if (an->requires_grad) {
        std::vector<float> da(m * k);
        kernels::gemm_nn(g.data(), bn->data.data(), da.data(), m, n, k);
        detail::accumulate(an, da);
      }
      if (bn->requires_grad) {
        std::vector<float> db(n * k);
        kernels::gemm_tn(g.data(), an->data.data(), db.data(), m, n, k);
        detail::accumulate(bn, db);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = a.at(i, j);
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), m, n] {
      auto g = detail::out_grad(on);
      std::vector<float> da(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] = g[j * m + i];
      detail::accumulate(an, da);
    });
  }
  return out;
}

namespace detail {

enum class Binary { Add, Sub, Mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  require_same_shape(a, b, name);
  Tensor out(a.shape());
  float* o = out.mutable_ptr();
  const float* x = a.ptr();
  const float* y = b.ptr();
  const std::size_t n = a.numel();
  switch (kind) {
    case Binary::Add:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
      break;
    case Binary::Sub:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      break;
    case Binary::Mul:
      for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
      break;
  }
  check_finite(out, name);
  if (recording({&a, &b})) {
    record(out, [an = a.node(), bn = b.node(), on = out.node(), kind, n] {
      auto g = out_grad(on);
      if (kind == Binary::Mul) {
        std::vector<float> d(n);
        if (an->requires_grad) {
          for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * bn->data[i];
          accumulate(an, d);
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * an->data[i];
          accumulate(bn, d);
        }
        return;
      }
      accumulate(an, g);
      if (kind == Binary::Add) {
        accumulate(bn, g);
      } else if (bn->requires_grad) {
        std::vector<float> d(g.begin(), g.end());
        for (float& v : d) v = -v;
        accumulate(bn, d);
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, detail::Binary::Add, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, detail::Binary::Sub, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise(a, b, detail::Binary::Mul, "mul");
}

inline Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] * s;
  detail::check_finite(out, "scale");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), s] {
      auto g = detail::out_grad(on);
      std::vector<float> d(g.begin(), g.end());
      for (float& v : d) v *= s;
      detail::accumulate(an, d);
    });
  }
  return out;
}

inline Tensor add_scalar(const Tensor& a, float s) {
  Tensor out(a.shape());
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] + s;
  detail::check_finite(out, "add_scalar");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node()] { detail::accumulate(an, detail::out_grad(on)); });
  }
  return out;
}

// a[m x n] + row[1 x n] broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.numel() != n) throw DimensionError("add_row: row of " + shape_str(row.shape()) + " for " + shape_str(a.shape()));
  Tensor out({m, n});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.at(i, j) + row[j];
  detail::check_finite(out, "add_row");
  if (detail::recording({&a, &row})) {
    detail::record(out, [an = a.node(), rn = row.node(), on = out.node(), m, n] {
      auto g = detail::out_grad(on);
      detail::accumulate(an, g);
      if (rn->requires_grad) {
        std::vector<double> acc(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) acc[j] += g[i * n + j];
        std::vector<float> d(acc.begin(), acc.end());
        detail::accumulate(rn, d);
      }
    });
  }
  return out;
}

inline Tensor silu(const Tensor& a) {
  Tensor out(a.shape());
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = kernels::silu(a[i]);
  detail::check_finite(out, "silu");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node()] {
      auto g = detail::out_grad(on);
      std::vector<float> d(g.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double x = an->data[i];
        const double sg = 1.0 / (1.0 + std::exp(-x));
        d[i] = static_cast<float>(g[i] * sg * (1.0 + x * (1.0 - sg)));
      }
      detail::accumulate(an, d);
    });
  }
  return out;
}

// Row-wise x / sqrt(mean(x^2) + eps), no learned gain.
inline Tensor rms_norm_rows(const Tensor& a) {
  detail::require_matrix(a, "rms_norm_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  auto inv = kernels::rms_norm_rows(a.ptr(), out.mutable_ptr(), m, n);
  detail::check_finite(out, "rms_norm_rows");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), inv = std::move(inv), m, n] {
      auto g = detail::out_grad(on);
      std::vector<float> d(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        const float* x = an->data.data() + i * n;
        const float* gi = g.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(gi[j]) * x[j];
        const double r = inv[i];
        const double c = r * r * r * dot / static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = static_cast<float>(gi[j] * r - x[j] * c);
      }
      detail::accumulate(an, d);
    });
  }
  return out;
}

inline Tensor softmax_rows(const Tensor& a) {
  detail::require_matrix(a, "softmax_rows");
  detail::check_finite(a, "softmax_rows input");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.clone();
  kernels::softmax_rows(out.mutable_ptr(), m, n);
  detail::check_finite(out, "softmax_rows");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), m, n] {
      auto g = detail::out_grad(on);
      const auto& p = on->data;
      std::vector<float> d(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[i * n + j]) * p[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          d[i * n + j] = static_cast<float>(p[i * n + j] * (g[i * n + j] - dot));
      }
      detail::accumulate(an, d);
    });
  }
  return out;
}

// out[i] = a[index[i]]
inline Tensor gather_rows(const Tensor& a, std::span<const std::uint32_t> index) {
  detail::require_matrix(a, "gather_rows");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({index.size(), n});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m) throw DimensionError("gather_rows: index out of range");
    std::copy_n(a.row_ptr(index[i]), n, o + i * n);
  }
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), idx = std::vector<std::uint32_t>(index.begin(), index.end()), m, n] {
      auto g = detail::out_grad(on);
      std::vector<float> d(m * n, 0.0f);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) d[idx[i] * n + j] += g[i * n + j];
      detail::accumulate(an, d);
    });
  }
  return out;
}

// out has `rows` rows; out[index[i]] += a[i], untouched rows are zero.
inline Tensor scatter_rows(const Tensor& a, std::span<const std::uint32_t> index, std::size_t rows) {
  detail::require_matrix(a, "scatter_rows");
  const std::size_t n = a.cols();
  if (index.size() != a.rows()) throw DimensionError("scatter_rows: index length vs rows");
  Tensor out({rows, n});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw DimensionError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) o[index[i] * n + j] += a.at(i, j);
  }
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), idx = std::vector<std::uint32_t>(index.begin(), index.end()), n] {
      auto g = detail::out_grad(on);
      std::vector<float> d(idx.size() * n);
      for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(g.data() + idx[i] * n, n, d.data() + i * n);
      detail::accumulate(an, d);
    });
  }
  return out;
}

// Columns [c0, c1).
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (c0 > c1 || c1 > n) throw DimensionError("slice_cols: bad column range");
  const std::size_t w = c1 - c0;
  Tensor out({m, w});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(a.row_ptr(i) + c0, w, o + i * w);
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), m, n, c0, w] {
      auto g = detail::out_grad(on);
      std::vector<float> d(m * n, 0.0f);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(g.data() + i * w, w, d.data() + i * n + c0);
      detail::accumulate(an, d);
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row mismatch");
    n += p.cols();
  }
  Tensor out({m, n});
  float* o = out.mutable_ptr();
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.row_ptr(i), w, o + i * n + off);
    off += w;
  }
  bool rec = false;
  for (const auto& p : parts) rec = rec || detail::recording({&p});
  if (rec) {
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::record(out, [nodes = std::move(nodes), on = out.node(), m, n] {
      auto g = detail::out_grad(on);
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          std::vector<float> d(m * w);
          for (std::size_t i = 0; i < m; ++i) std::copy_n(g.data() + i * n + off, w, d.data() + i * w);
          detail::accumulate(pn, d);
        }
        off += w;
      }
    });
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column mismatch");
    m += p.rows();
  }
  Tensor out({m, n});
  float* o = out.mutable_ptr();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o + off * n);
    off += p.rows();
  }
  bool rec = false;
  for (const auto& p : parts) rec = rec || detail::recording({&p});
  if (rec) {
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::record(out, [nodes = std::move(nodes), on = out.node(), n] {
      auto g = detail::out_grad(on);
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t r = pn->shape[0];
        if (pn->requires_grad) detail::accumulate(pn, g.subspan(off * n, r * n));
        off += r;
      }
    });
  }
  return out;
}

// Multiplies row i by the constant weights[i].
inline Tensor row_scale(const Tensor& a, std::span<const float> weights) {
  detail::require_matrix(a, "row_scale");
  const std::size_t m = a.rows(), n = a.cols();
  if (weights.size() != m) throw DimensionError("row_scale: weight count vs rows");
  Tensor out({m, n});
  float* o = out.mutable_ptr();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = a.at(i, j) * weights[i];
  detail::check_finite(out, "row_scale");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node(), w = std::vector<float>(weights.begin(), weights.end()), m, n] {
      auto g = detail::out_grad(on);
      std::vector<float> d(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = g[i * n + j] * w[i];
      detail::accumulate(an, d);
    });
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  detail::check_finite(out, "sum");
  if (detail::recording({&a})) {
    detail::record(out, [an = a.node(), on = out.node()] {
      const float g = detail::out_grad(on)[0];
      std::vector<float> d(an->data.size(), g);
      detail::accumulate(an, d);
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(a.numel()));
}

// Mean squared error over all elements.
inline Tensor mse(const Tensor& prediction, const Tensor& target) {
  Tensor d = sub(prediction, target);
  return mean(mul(d, d));
}

}  // namespace hieredit
