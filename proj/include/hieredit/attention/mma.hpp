// SPDX-License-Identifier: Apache-2.0
//
// Role-masked multi-modal attention. Every path (dense, dense under an explicit
// allow matrix, windowed) goes through kernels::attend, which evaluates one
// set of queries against one ordered key list; the paths differ only in which
// keys each query sees.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hieredit/attention/plan.hpp"
#include "hieredit/numerics/ops.hpp"
#include "hieredit/rope.hpp"

namespace hieredit {

// Stand-in for -inf on disallowed query/key pairs.
inline constexpr double kMaskBias = -1e9;

// Where each sequence token sits. Image tokens carry their grid cell, all
// other tokens have cell -1 and are visible to every window. Inert tokens are
// evaluated for cost only: never a key, output always discarded.
struct TokenLayout {
  std::vector<TokenRole> roles;
  std::vector<std::int32_t> cell;
  std::vector<std::uint8_t> inert;

  std::size_t size() const { return roles.size(); }
  bool is_inert(std::size_t i) const { return !inert.empty() && inert[i] != 0; }

  static TokenLayout global_only(std::vector<TokenRole> roles) {
    TokenLayout lay;
    lay.cell.assign(roles.size(), -1);
    lay.roles = std::move(roles);
    return lay;
  }
};

struct BoolMatrix {
  std::size_t n = 0;
  std::vector<std::uint8_t> bits;

  explicit BoolMatrix(std::size_t size = 0) : n(size), bits(size * size, 0) {}
  bool operator()(std::size_t i, std::size_t j) const { return bits[i * n + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on = true) { bits[i * n + j] = on ? 1 : 0; }
  std::size_t row_count(std::size_t i) const {
    return static_cast<std::size_t>(std::count(bits.begin() + static_cast<long>(i * n),
                                               bits.begin() + static_cast<long>((i + 1) * n), 1));
  }
};

struct AttentionResult {
  Tensor out;                          // rows that were not computed are zero
  std::vector<std::uint8_t> computed;  // 1 where out holds a valid attention output
  std::uint64_t flops = 0;             // 2 * scores * head width, see flop_count
};

namespace kernels {

struct AttendScratch {
  std::vector<float> keys, values;
  std::vector<double> scores, acc;
  std::vector<std::uint8_t> allowed;
};

// For each query index in `queries`, writes softmax(q k^T / sqrt(dh) + bias) v
// into the matching row of `out`, per head. Keys are taken in the given order;
// `allow(query, key)` selects bias 0 or kMaskBias. Returns the score-matmul
// flop count.
template <class Allow>
std::uint64_t attend(const float* q, const float* k, const float* v, std::size_t width, std::size_t heads,
                     std::span<const std::uint32_t> queries, std::span<const std::uint32_t> keys,
                     Allow&& allow, float* out, AttendScratch& s) {
  const std::size_t dh = width / heads, nk = keys.size();
  if (queries.empty() || nk == 0) return 0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  s.keys.resize(nk * width);
  s.values.resize(nk * width);
  for (std::size_t j = 0; j < nk; ++j) {
    std::copy_n(k + static_cast<std::size_t>(keys[j]) * width, width, s.keys.data() + j * width);
    std::copy_n(v + static_cast<std::size_t>(keys[j]) * width, width, s.values.data() + j * width);
  }
  s.scores.resize(nk);
  s.allowed.resize(nk);
  s.acc.resize(dh);
  for (std::uint32_t qi : queries) {
    bool any = false;
    for (std::size_t j = 0; j < nk; ++j) any |= (s.allowed[j] = allow(qi, keys[j]) ? 1 : 0) != 0;
    for (std::size_t h = 0; h < heads; ++h) {
      const float* qh = q + static_cast<std::size_t>(qi) * width + h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        const float* kh = s.keys.data() + j * width + h * dh;
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += static_cast<double>(qh[d]) * kh[d];
        double sc = dot * scale;
        if (!s.allowed[j]) sc += kMaskBias;
        s.scores[j] = sc;
        mx = std::max(mx, sc);
      }
      // Every key costs the same whatever the mask: the exponent is clamped
      // to stay on libm's fast path, masked weights are zeroed by selection
      // and the value sum runs over all keys. A masked key's weight is
      // exactly zero, as exp(kMaskBias) would be; an allowed key's weight
      // moves by at most e^-80 of the row maximum.
      double total = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        const double e = std::exp(std::max(s.scores[j] - mx, -80.0));
        s.scores[j] = s.allowed[j] || !any ? e : 0.0;
        total += s.scores[j];
      }
      std::fill(s.acc.begin(), s.acc.end(), 0.0);
      for (std::size_t j = 0; j < nk; ++j) {
        const double p = s.scores[j] / total;
        const float* vh = s.values.data() + j * width + h * dh;
        for (std::size_t d = 0; d < dh; ++d) s.acc[d] += p * vh[d];
      }
      float* oh = out + static_cast<std::size_t>(qi) * width + h * dh;
      for (std::size_t d = 0; d < dh; ++d) oh[d] = static_cast<float>(s.acc[d]);
    }
  }
  return 2ull * queries.size() * nk * width;
}

}  // namespace kernels

namespace detail {

inline void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t tokens, std::size_t heads) {
  for (const Tensor* t : {&q, &k, &v}) require_matrix(*t, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()));
  }
  if (q.rows() != tokens) {
    throw DimensionError("attention: " + std::to_string(q.rows()) + " tokens vs " + std::to_string(tokens) +
                         " roles");
  }
  if (heads == 0 || q.cols() % heads != 0) throw DimensionError("attention: width not divisible by heads");
}

inline bool query_selected(std::span<const std::uint8_t> mask, std::size_t i) {
  return mask.empty() || mask[i] != 0;
}

}  // namespace detail

inline BoolMatrix role_allow_matrix(const TokenLayout& layout) {
  const std::size_t n = layout.size();
  BoolMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (layout.is_inert(i)) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (!layout.is_inert(j) && role_allows(layout.roles[i], layout.roles[j])) m.set(i, j);
  }
  return m;
}

struct DenseOptions {
  // Evaluate rows that have no allowed key as well (against all keys) and
  // discard them. Keeps the cost of the dense baseline independent of masks.
  bool evaluate_all_rows = false;
  std::span<const std::uint8_t> query_mask;  // empty: every row
};

// Dense attention over already-rotated q/k under an explicit allow matrix.
inline AttentionResult dense_masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                              const BoolMatrix& allow, std::size_t heads,
                                              const DenseOptions& opts = {}) {
  const std::size_t n = allow.n;
  detail::check_qkv(q, k, v, n, heads);
  AttentionResult res{Tensor({n, q.cols()}), std::vector<std::uint8_t>(n, 0), 0};
  std::vector<std::uint32_t> keys(n);
  std::iota(keys.begin(), keys.end(), 0u);
  std::vector<std::uint32_t> live, discard;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::query_selected(opts.query_mask, i)) continue;
    if (allow.row_count(i) > 0) {
      live.push_back(static_cast<std::uint32_t>(i));
      res.computed[i] = 1;
    } else if (opts.evaluate_all_rows) {
      discard.push_back(static_cast<std::uint32_t>(i));
    }
  }
  auto rule = [&](std::uint32_t i, std::uint32_t j) { return allow(i, j); };
  kernels::AttendScratch scratch;
  res.flops += kernels::attend(q.ptr(), k.ptr(), v.ptr(), q.cols(), heads, live, keys, rule, res.out.mutable_ptr(),
                               scratch);
  if (!discard.empty()) {
    std::vector<float> sink(n * q.cols());
    res.flops += kernels::attend(q.ptr(), k.ptr(), v.ptr(), q.cols(), heads, discard, keys, rule, sink.data(), scratch);
  }
  return res;
}

// softmax(Q K^T / sqrt(d) + role_bias) V over the whole sequence, RoPE applied
// to q and k first.
inline AttentionResult dense_mma(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const TokenRole> roles,
                                 std::span<const GridCoord> coords, const RopeParams& rope, std::size_t heads = 1) {
  detail::check_qkv(q, k, v, roles.size(), heads);
  const Tensor qr = rope_rotate(q, coords, rope, heads);
  const Tensor kr = rope_rotate(k, coords, rope, heads);
  const auto layout = TokenLayout::global_only(std::vector<TokenRole>(roles.begin(), roles.end()));
  return dense_masked_attention(qr, kr, v, role_allow_matrix(layout), heads);
}

namespace detail {

inline void validate_layout(const AttentionPlan& plan, const TokenLayout& layout) {
  if (layout.cell.size() != layout.size() || (!layout.inert.empty() && layout.inert.size() != layout.size())) {
    throw DimensionError("token layout vectors have different lengths");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto c = layout.cell[i];
    if (c >= 0 && static_cast<std::size_t>(c) >= plan.cells()) {
      throw PlanError("token " + std::to_string(i) + " at cell " + std::to_string(c) +
                      " is not covered by any window");
    }
  }
}

// Sequence indices of the tokens in every cell (CSR) plus the global tokens.
struct CellIndex {
  std::vector<std::uint32_t> offsets, tokens, global;

  CellIndex(const AttentionPlan& plan, const TokenLayout& layout) : offsets(plan.cells() + 1, 0) {
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout.cell[i] < 0) {
        global.push_back(static_cast<std::uint32_t>(i));
      } else {
        ++offsets[static_cast<std::size_t>(layout.cell[i]) + 1];
      }
    }
    std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
    tokens.resize(offsets.back());
    std::vector<std::uint32_t> fill(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < layout.size(); ++i)
      if (layout.cell[i] >= 0) tokens[fill[static_cast<std::size_t>(layout.cell[i])]++] = static_cast<std::uint32_t>(i);
  }

  void append(std::span<const std::uint32_t> cells, std::vector<std::uint32_t>& out) const {
    for (std::uint32_t c : cells)
      for (std::uint32_t p = offsets[c]; p < offsets[c + 1]; ++p) out.push_back(tokens[p]);
  }
};

}  // namespace detail

// Allow matrix under which dense attention reproduces windowed attention:
// image tokens of an active window see their window's key cells plus every
// global token, global tokens see the whole sequence, and everything is
// further restricted by role_allows. Rows of inactive windows and inert
// tokens are empty.
inline BoolMatrix masked_equivalent_dense(const AttentionPlan& plan, const TokenLayout& layout) {
  detail::validate_layout(plan, layout);
  const std::size_t n = layout.size();
  BoolMatrix m(n);
  std::vector<std::uint8_t> visible(plan.cells());
  for (std::size_t i = 0; i < n; ++i) {
    if (layout.is_inert(i)) continue;
    const auto cell = layout.cell[i];
    if (cell >= 0) {
      const std::size_t w = plan.window_of_cell[static_cast<std::size_t>(cell)];
      if (!plan.is_active(w)) continue;
      std::fill(visible.begin(), visible.end(), 0);
      for (auto c : plan.windows[w].keys) visible[c] = 1;
      for (std::size_t j = 0; j < n; ++j) {
        if (layout.is_inert(j) || !role_allows(layout.roles[i], layout.roles[j])) continue;
        if (layout.cell[j] < 0 || visible[static_cast<std::size_t>(layout.cell[j])]) m.set(i, j);
      }
    } else {
      for (std::size_t j = 0; j < n; ++j)
        if (!layout.is_inert(j) && role_allows(layout.roles[i], layout.roles[j])) m.set(i, j);
    }
  }
  return m;
}

struct WindowedOptions {
  // Evaluate inactive windows too and discard the result.
  bool compute_inactive = false;
  std::span<const std::uint8_t> query_mask;  // empty: every row
  std::size_t threads = 1;                   // windows are spread over this many threads
};

// Local-window attention over already-rotated q/k. Image-token queries of each
// active window attend to the window's interior + halo cells and to all
// global tokens; global queries attend to the whole sequence. Role rules apply
// throughout. Image tokens of inactive windows are not computed.
inline AttentionResult windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionPlan& plan,
                                          const TokenLayout& layout, std::size_t heads,
                                          const WindowedOptions& opts = {}) {
  const std::size_t n = layout.size();
  detail::check_qkv(q, k, v, n, heads);
  detail::validate_layout(plan, layout);
  const std::size_t width = q.cols();
  AttentionResult res{Tensor({n, width}), std::vector<std::uint8_t>(n, 0), 0};
  const detail::CellIndex index(plan, layout);

  auto rule = [&](std::uint32_t i, std::uint32_t j) {
    return !layout.is_inert(j) && role_allows(layout.roles[i], layout.roles[j]);
  };
  // Windows write disjoint query rows, so they can be split across threads.
  auto run_window = [&](std::size_t w, kernels::AttendScratch& scratch, std::vector<float>& sink,
                        std::vector<std::uint32_t>& queries, std::vector<std::uint32_t>& keys,
                        std::vector<std::uint32_t>& cell_tokens) -> std::uint64_t {
    const bool active = plan.is_active(w);
    if (!active && !opts.compute_inactive) return 0;
    queries.clear();
    cell_tokens.clear();
    index.append(plan.windows[w].interior, cell_tokens);
    for (auto t : cell_tokens)
      if (detail::query_selected(opts.query_mask, t)) queries.push_back(t);
    if (queries.empty()) return 0;
    std::sort(queries.begin(), queries.end());
    keys.clear();
    index.append(plan.windows[w].keys, keys);
    keys.insert(keys.end(), index.global.begin(), index.global.end());
    std::sort(keys.begin(), keys.end());
    float* dst = res.out.mutable_ptr();
    if (!active) {
      sink.assign(n * width, 0.0f);
      dst = sink.data();
    }
    const auto f = kernels::attend(q.ptr(), k.ptr(), v.ptr(), width, heads, queries, keys, rule, dst, scratch);
    if (active)
      for (auto t : queries) res.computed[t] = layout.is_inert(t) ? 0 : 1;
    return f;
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, plan.windows.size()));
  if (threads == 1) {
    kernels::AttendScratch scratch;
    std::vector<float> sink;
    std::vector<std::uint32_t> qs, ks, cs;
    for (std::size_t w = 0; w < plan.windows.size(); ++w) res.flops += run_window(w, scratch, sink, qs, ks, cs);
  } else {
    std::vector<std::uint64_t> partial(threads, 0);
    std::vector<std::thread> pool;
    for (std::size_t tid = 0; tid < threads; ++tid) {
      pool.emplace_back([&, tid] {
        kernels::AttendScratch scratch;
        std::vector<float> sink;
        std::vector<std::uint32_t> qs, ks, cs;
        for (std::size_t w = tid; w < plan.windows.size(); w += threads)
          partial[tid] += run_window(w, scratch, sink, qs, ks, cs);
      });
    }
    for (auto& th : pool) th.join();
    for (auto f : partial) res.flops += f;
  }

  kernels::AttendScratch scratch;
  std::vector<std::uint32_t> queries, keys;
  // Global queries, grouped by role so each group scans only admissible keys.
  for (TokenRole role : {TokenRole::Text, TokenRole::Condition, TokenRole::Noisy, TokenRole::LowResAnchor,
                         TokenRole::Control}) {
    queries.clear();
    for (auto t : index.global)
      if (layout.roles[t] == role && detail::query_selected(opts.query_mask, t)) queries.push_back(t);
    if (queries.empty()) continue;
    keys.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (!layout.is_inert(j) && role_allows(role, layout.roles[j])) keys.push_back(static_cast<std::uint32_t>(j));
    res.flops += kernels::attend(q.ptr(), k.ptr(), v.ptr(), width, heads, queries, keys, rule, res.out.mutable_ptr(),
                                 scratch);
    for (auto t : queries) res.computed[t] = layout.is_inert(t) ? 0 : 1;
  }
  return res;
}

// Windowed MMA with RoPE applied to q and k from `coords`.
inline AttentionResult windowed_mma(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionPlan& plan,
                                    const TokenLayout& layout, std::span<const GridCoord> coords,
                                    const RopeParams& rope, std::size_t heads = 1, const WindowedOptions& opts = {}) {
  detail::check_qkv(q, k, v, layout.size(), heads);
  return windowed_attention(rope_rotate(q, coords, rope, heads), rope_rotate(k, coords, rope, heads), v, plan, layout,
                            heads, opts);
}

// Differentiable dense attention under an allow matrix, for training. Rows with
// no allowed key produce zeros and pass no gradient.
inline Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix& allow,
                               std::size_t heads) {
  const std::size_t n = allow.n;
  detail::check_qkv(q, k, v, n, heads);
  const std::size_t width = q.cols(), dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // Masked keys get weight exp(kMaskBias) = 0 exactly, so only allowed keys
  // are visited. keys[start[i] .. start[i+1]) lists row i's keys.
  std::vector<std::uint32_t> keys, start(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (allow(i, j)) keys.push_back(static_cast<std::uint32_t>(j));
    start[i + 1] = static_cast<std::uint32_t>(keys.size());
  }
  const std::size_t nnz = keys.size();
  std::vector<double> probs(heads * nnz, 0.0);  // [h][nnz]
  Tensor out({n, width});
  float* o = out.mutable_ptr();
  const float* qd = q.ptr();
  const float* kd = k.ptr();
  const float* vd = v.ptr();
  std::vector<double> acc(dh);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = start[i], e = start[i + 1];
      if (b == e) continue;
      double* p = probs.data() + h * nnz;
      const float* qi = qd + i * width + h * dh;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = b; s < e; ++s) {
        const float* kj = kd + keys[s] * width + h * dh;
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += static_cast<double>(qi[d]) * kj[d];
        p[s] = dot * scale;
        mx = std::max(mx, p[s]);
      }
      double total = 0.0;
      for (std::size_t s = b; s < e; ++s) {
        p[s] = std::exp(p[s] - mx);
        total += p[s];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t s = b; s < e; ++s) {
        p[s] /= total;
        const float* vj = vd + keys[s] * width + h * dh;
        for (std::size_t d = 0; d < dh; ++d) acc[d] += p[s] * vj[d];
      }
      for (std::size_t d = 0; d < dh; ++d) o[i * width + h * dh + d] = static_cast<float>(acc[d]);
    }
  }
  detail::check_finite(out, "masked_attention");
  if (detail::recording({&q, &k, &v})) {
    detail::record(out, [qn = q.node(), kn = k.node(), vn = v.node(), on = out.node(), probs = std::move(probs),
                         keys = std::move(keys), start = std::move(start), n, width, heads, dh, scale, nnz] {
      auto g = detail::out_grad(on);
      std::vector<double> dq(n * width, 0.0), dk(n * width, 0.0), dv(n * width, 0.0), ds(nnz);
      const float* qd = qn->data.data();
      const float* kd = kn->data.data();
      const float* vd = vn->data.data();
      for (std::size_t h = 0; h < heads; ++h) {
        const double* p = probs.data() + h * nnz;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t b = start[i], e = start[i + 1];
          if (b == e) continue;
          const float* gi = g.data() + i * width + h * dh;
          double rowdot = 0.0;
          for (std::size_t s = b; s < e; ++s) {
            const std::size_t j = keys[s];
            const float* vj = vd + j * width + h * dh;
            double dp = 0.0;
            for (std::size_t d = 0; d < dh; ++d) dp += static_cast<double>(gi[d]) * vj[d];
            ds[s] = dp;
            rowdot += dp * p[s];
            double* dvj = dv.data() + j * width + h * dh;
            for (std::size_t d = 0; d < dh; ++d) dvj[d] += p[s] * gi[d];
          }
          const float* qi = qd + i * width + h * dh;
          double* dqi = dq.data() + i * width + h * dh;
          for (std::size_t s = b; s < e; ++s) {
            const double dsc = p[s] * (ds[s] - rowdot) * scale;
            if (dsc == 0.0) continue;
            const std::size_t j = keys[s];
            const float* kj = kd + j * width + h * dh;
            double* dkj = dk.data() + j * width + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
              dqi[d] += dsc * kj[d];
              dkj[d] += dsc * qi[d];
            }
          }
        }
      }
      auto flush = [](const std::shared_ptr<Tensor::Node>& node, const std::vector<double>& d) {
        if (!node->requires_grad) return;
        std::vector<float> f(d.begin(), d.end());
        detail::accumulate(node, f);
      };
      flush(qn, dq);
      flush(kn, dk);
      flush(vn, dv);
    });
  }
  return out;
}

}  // namespace hieredit
