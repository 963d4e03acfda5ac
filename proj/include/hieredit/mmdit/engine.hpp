// SPDX-License-Identifier: Apache-2.0
//
// Inference forward pass. Works on plain row buffers and evaluates only the
// rows a configuration needs: with windowed attention, image tokens of
// inactive windows stay at their embedding and only serve as halo keys; with
// the feature cache, static rows run through the network once and later
// steps project only the dynamic rows. Every row is computed by the same
// per-row kernels in all modes.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hieredit/attention/kv_cache.hpp"
#include "hieredit/mmdit/forward_graph.hpp"

namespace hieredit {

struct EngineOptions {
  bool windowed = true;  // false: dense attention under the equivalent mask, all rows evaluated
  bool cache = true;     // reuse static-row keys/values across calls
  std::size_t threads = 1;
};

class Engine {
 public:
  Engine(const ModelParams& model, const AssembledSequence& seq, EngineOptions opts = {})
      : m_(model), seq_(seq), opts_(opts), rc_(classify_rows(seq)) {
    m_.config.validate();
    n_ = seq.size();
    d_ = m_.config.token_dim();
    if (seq.content.cols() != m_.config.patch_dim()) throw DimensionError("engine: sequence token width");
    if (!opts_.windowed) allow_ = masked_equivalent_dense(seq.plan, seq.layout);

    std::vector<std::uint8_t> halo_key(n_, 0);
    if (opts_.windowed) {
      std::vector<std::uint8_t> key_cell(seq.plan.cells(), 0);
      for (auto w : seq.plan.active)
        for (auto c : seq.plan.windows[w].keys) key_cell[c] = 1;
      for (std::size_t i = 0; i < n_; ++i)
        if (rc_.frozen[i] && !seq.layout.is_inert(i)) halo_key[i] = key_cell[static_cast<std::size_t>(seq.layout.cell[i])];
    }
    for (std::size_t i = 0; i < n_; ++i) {
      const auto row = static_cast<std::uint32_t>(i);
      const bool evaluated = !opts_.windowed || !rc_.frozen[i];
      const bool kv = evaluated || halo_key[i];
      if (rc_.is_static[i] != 0.0f) {
        if (evaluated) static_update_.push_back(row);
        if (kv) static_kv_.push_back(row);
      } else if (evaluated) {
        dynamic_update_.push_back(row);
      }
    }
    std::merge(static_update_.begin(), static_update_.end(), dynamic_update_.begin(), dynamic_update_.end(),
               std::back_inserter(all_update_));
    std::merge(static_kv_.begin(), static_kv_.end(), dynamic_update_.begin(), dynamic_update_.end(),
               std::back_inserter(all_kv_));
    const Modulation m0 = modulation(m_, 0.0);
    for (const auto& b : m0.blocks) mod0_.emplace_back(b.data().begin(), b.data().end());
    h_.assign(n_ * d_, 0.0f);
    q_.assign(n_ * d_, 0.0f);
    k_.assign(n_ * d_, 0.0f);
    v_.assign(n_ * d_, 0.0f);
  }

  // Velocity at the live Noisy tokens for latent z [M x patch_dim].
  Tensor velocity(const Tensor& z, double t) {
    check_timestep(t);
    check_sequence(m_, seq_, z);
    const Modulation mt = modulation(m_, t);
    std::vector<std::vector<float>> modt;
    for (const auto& b : mt.blocks) modt.emplace_back(b.data().begin(), b.data().end());

    if (opts_.cache) {
      if (!cache_.valid) {
        build_cache();
      } else {
        cache_.check(static_fingerprint(seq_));
      }
      embed(dynamic_update_, z);
      run(dynamic_update_, dynamic_update_, modt, false);
    } else {
      embed(all_update_, z);
      embed(only_kv(static_kv_, static_update_), z);
      run(all_update_, all_kv_, modt, false);
    }
    ++steps_;
    return output(mt);
  }

  // Drops and rebuilds the static-row cache from the current sequence content.
  void build_cache() {
    cache_ = KvCache{};
    cache_.static_rows = static_kv_;
    for (std::size_t l = 0; l < m_.config.layers; ++l) {
      cache_.keys.push_back(Tensor({n_, d_}));
      cache_.values.push_back(Tensor({n_, d_}));
    }
    if (!static_kv_.empty()) {
      embed(static_kv_, Tensor::zeros({seq_.noisy_rows.size(), m_.config.patch_dim()}));
      run(static_update_, static_kv_, mod0_, true);
    }
    cache_.fingerprint = static_fingerprint(seq_);
    cache_.valid = true;
    ++cache_builds_;
  }

  const KvCache& cache() const { return cache_; }
  std::size_t cache_builds() const { return cache_builds_; }
  std::size_t steps() const { return steps_; }
  std::uint64_t attention_flops() const { return flops_; }
  const EngineOptions& options() const { return opts_; }

 private:
  static std::vector<std::uint32_t> only_kv(const std::vector<std::uint32_t>& kv,
                                            const std::vector<std::uint32_t>& update) {
    std::vector<std::uint32_t> out;
    std::set_difference(kv.begin(), kv.end(), update.begin(), update.end(), std::back_inserter(out));
    return out;
  }

  // Input projection plus role embedding for `rows`.
  void embed(const std::vector<std::uint32_t>& rows, const Tensor& z) {
    const std::size_t pd = m_.config.patch_dim();
    std::vector<std::uint32_t> noisy_slot(n_, UINT32_MAX);
    for (std::size_t s = 0; s < seq_.noisy_rows.size(); ++s) noisy_slot[seq_.noisy_rows[s]] = static_cast<std::uint32_t>(s);
    std::vector<std::uint32_t> patch_rows;
    for (auto r : rows) {
      if (seq_.is_text(r)) {
        const float* e = m_.text_emb.row_ptr(static_cast<std::size_t>(seq_.text_ids[r]));
        std::copy_n(e, d_, h_.data() + r * d_);
      } else {
        patch_rows.push_back(r);
      }
    }
    if (!patch_rows.empty()) {
      scratch_a_.resize(patch_rows.size() * pd);
      for (std::size_t j = 0; j < patch_rows.size(); ++j) {
        const auto r = patch_rows[j];
        const float* src = noisy_slot[r] != UINT32_MAX ? z.row_ptr(noisy_slot[r]) : seq_.content.row_ptr(r);
        std::copy_n(src, pd, scratch_a_.data() + j * pd);
      }
      scratch_b_.resize(patch_rows.size() * d_);
      kernels::gemm_nn(scratch_a_.data(), m_.patch_in.ptr(), scratch_b_.data(), patch_rows.size(), pd, d_);
      for (std::size_t j = 0; j < patch_rows.size(); ++j) {
        float* dst = h_.data() + patch_rows[j] * d_;
        for (std::size_t c = 0; c < d_; ++c) dst[c] = scratch_b_[j * d_ + c] + m_.patch_in_b[c];
      }
    }
    for (auto r : rows) {
      const float* re = m_.role_emb.row_ptr(static_cast<std::size_t>(seq_.layout.roles[r]));
      float* dst = h_.data() + r * d_;
      for (std::size_t c = 0; c < d_; ++c) dst[c] += re[c];
    }
  }

  const float* mod_for(std::size_t row, std::size_t layer, const std::vector<std::vector<float>>& modt) const {
    return rc_.is_static[row] != 0.0f ? mod0_[layer].data() : modt[layer].data();
  }

  // dst[rows] = rms(src[rows]) * (1 + scale) + shift, modulation part k.
  void modulated_norm(const std::vector<std::uint32_t>& rows, std::size_t layer, std::size_t part,
                      const std::vector<std::vector<float>>& modt, std::vector<float>& dst) {
    dst.resize(rows.size() * d_);
    std::vector<float> tmp(d_);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const float* mod = mod_for(rows[j], layer, modt);
      kernels::rms_norm_rows(h_.data() + rows[j] * d_, tmp.data(), 1, d_);
      for (std::size_t c = 0; c < d_; ++c) {
        const float s = mod[(part + 1) * d_ + c] + 1.0f;
        dst[j * d_ + c] = tmp[c] * s + mod[part * d_ + c];
      }
    }
  }

  // out[j] = x[j] W (+ lora for static rows), x and out packed by `rows`.
  void project(const std::vector<std::uint32_t>& rows, const std::vector<float>& x, const Tensor& w,
               const LoraFactors& f, std::vector<float>& out) {
    const std::size_t r = rows.size(), rank = f.a.cols();
    out.resize(r * d_);
    kernels::gemm_nn(x.data(), w.ptr(), out.data(), r, d_, d_);
    const float s = static_cast<float>(m_.config.lora_scale());
    if (!opts_.cache) {
      // The uncached path evaluates every row alike, so the adapter runs on
      // all rows and a 0/1 weight keeps it to the static ones.
      std::vector<float> xa(r * rank), xab(r * d_);
      kernels::gemm_nn(x.data(), f.a.ptr(), xa.data(), r, d_, rank);
      kernels::gemm_nn(xa.data(), f.b.ptr(), xab.data(), r, rank, d_);
      for (std::size_t j = 0; j < r; ++j) {
        const float wj = rc_.is_static[rows[j]] * s;
        for (std::size_t c = 0; c < d_; ++c) out[j * d_ + c] += xab[j * d_ + c] * wj;
      }
      return;
    }
    std::vector<std::size_t> st;
    for (std::size_t j = 0; j < r; ++j)
      if (rc_.is_static[rows[j]] != 0.0f) st.push_back(j);
    if (st.empty()) return;
    std::vector<float> xs(st.size() * d_), xa(st.size() * rank), xab(st.size() * d_);
    for (std::size_t j = 0; j < st.size(); ++j) std::copy_n(x.data() + st[j] * d_, d_, xs.data() + j * d_);
    kernels::gemm_nn(xs.data(), f.a.ptr(), xa.data(), st.size(), d_, rank);
    kernels::gemm_nn(xa.data(), f.b.ptr(), xab.data(), st.size(), rank, d_);
    for (std::size_t j = 0; j < st.size(); ++j)
      for (std::size_t c = 0; c < d_; ++c) out[st[j] * d_ + c] += xab[j * d_ + c] * s;
  }

  void rotate(const std::vector<std::uint32_t>& rows, std::vector<float>& packed, std::vector<float>& dst_full) {
    const RopeParams rope = m_.config.rope();
    std::vector<double> angles;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      detail::rope_angles(seq_.coords[rows[j]], rope, angles);
      detail::rope_row(packed.data() + j * d_, dst_full.data() + rows[j] * d_, m_.config.heads, rope.head_dim, angles,
                       1.0);
    }
  }

  void scatter(const std::vector<std::uint32_t>& rows, const std::vector<float>& packed, std::vector<float>& full) {
    for (std::size_t j = 0; j < rows.size(); ++j) std::copy_n(packed.data() + j * d_, d_, full.data() + rows[j] * d_);
  }

  void check_finite_rows(const std::vector<std::uint32_t>& rows, std::size_t layer) const {
    for (auto r : rows)
      for (std::size_t c = 0; c < d_; ++c)
        if (!std::isfinite(h_[r * d_ + c])) {
          throw NumericError("layer " + std::to_string(layer) + ": non-finite activation at row " + std::to_string(r));
        }
  }

  void run(const std::vector<std::uint32_t>& update, const std::vector<std::uint32_t>& kv,
           const std::vector<std::vector<float>>& modt, bool store) {
    const std::size_t heads = m_.config.heads;
    std::vector<std::uint8_t> query_mask(n_, 0);
    for (auto r : update) query_mask[r] = 1;
    const bool from_cache = opts_.cache && !store;
    std::vector<float> x, y, tmp, ffn;
    for (std::size_t l = 0; l < m_.config.layers; ++l) {
      const auto& b = m_.blocks[l];
      modulated_norm(kv, l, 0, modt, x);
      // kv is a superset of update; pick the update rows' normalised input for Q.
      std::vector<float> xq(update.size() * d_);
      {
        std::size_t p = 0;
        for (std::size_t j = 0; j < kv.size() && p < update.size(); ++j)
          if (kv[j] == update[p]) std::copy_n(x.data() + j * d_, d_, xq.data() + (p++) * d_);
      }
      project(update, xq, b.wq, b.lq, tmp);
      rotate(update, tmp, q_);
      project(kv, x, b.wk, b.lk, tmp);
      rotate(kv, tmp, k_);
      project(kv, x, b.wv, b.lv, tmp);
      scatter(kv, tmp, v_);
      if (store) {
        for (auto r : kv) {
          std::copy_n(k_.data() + r * d_, d_, cache_.keys[l].mutable_ptr() + r * d_);
          std::copy_n(v_.data() + r * d_, d_, cache_.values[l].mutable_ptr() + r * d_);
        }
      } else if (from_cache) {
        for (auto r : cache_.static_rows) {
          std::copy_n(cache_.keys[l].ptr() + r * d_, d_, k_.data() + r * d_);
          std::copy_n(cache_.values[l].ptr() + r * d_, d_, v_.data() + r * d_);
        }
      }
      const Tensor qt({n_, d_}, q_), kt({n_, d_}, k_), vt({n_, d_}, v_);
      AttentionResult att;
      if (opts_.windowed) {
        WindowedOptions wo;
        wo.query_mask = query_mask;
        wo.threads = opts_.threads;
        att = windowed_attention(qt, kt, vt, seq_.plan, seq_.layout, heads, wo);
      } else {
        DenseOptions dense;
        dense.query_mask = query_mask;
        dense.evaluate_all_rows = true;
        att = dense_masked_attention(qt, kt, vt, allow_, heads, dense);
      }
      flops_ += att.flops;

      std::vector<float> a(update.size() * d_);
      for (std::size_t j = 0; j < update.size(); ++j) std::copy_n(att.out.ptr() + update[j] * d_, d_, a.data() + j * d_);
      project(update, a, b.wo, b.lo, tmp);
      for (std::size_t j = 0; j < update.size(); ++j) {
        const auto r = update[j];
        if (rc_.live[r] == 0.0f) continue;
        const float* gate = mod_for(r, l, modt) + 2 * d_;
        for (std::size_t c = 0; c < d_; ++c) h_[r * d_ + c] += gate[c] * tmp[j * d_ + c];
      }
      modulated_norm(update, l, 3, modt, y);
      const std::size_t f = m_.config.ffn_dim();
      ffn.resize(update.size() * f);
      kernels::gemm_nn(y.data(), b.w1.ptr(), ffn.data(), update.size(), d_, f);
      for (float& v : ffn) v = kernels::silu(v);
      tmp.resize(update.size() * d_);
      kernels::gemm_nn(ffn.data(), b.w2.ptr(), tmp.data(), update.size(), f, d_);
      for (std::size_t j = 0; j < update.size(); ++j) {
        const auto r = update[j];
        if (rc_.live[r] == 0.0f) continue;
        const float* gate = mod_for(r, l, modt) + 5 * d_;
        for (std::size_t c = 0; c < d_; ++c) h_[r * d_ + c] += gate[c] * tmp[j * d_ + c];
      }
      check_finite_rows(update, l);
    }
  }

  Tensor output(const Modulation& mt) {
    const std::size_t mrows = seq_.noisy_rows.size(), pd = m_.config.patch_dim();
    Tensor out({mrows, pd});
    if (mrows == 0) return out;
    std::vector<float> y(mrows * d_), tmp(d_);
    const float* fm = mt.final.ptr();
    for (std::size_t j = 0; j < mrows; ++j) {
      kernels::rms_norm_rows(h_.data() + seq_.noisy_rows[j] * d_, tmp.data(), 1, d_);
      for (std::size_t c = 0; c < d_; ++c) y[j * d_ + c] = tmp[c] * (fm[d_ + c] + 1.0f) + fm[c];
    }
    kernels::gemm_nn(y.data(), m_.patch_out.ptr(), out.mutable_ptr(), mrows, d_, pd);
    float* o = out.mutable_ptr();
    for (std::size_t j = 0; j < mrows; ++j)
      for (std::size_t c = 0; c < pd; ++c) o[j * pd + c] += m_.patch_out_b[c];
    detail::check_finite(out, "engine output");
    return out;
  }

  const ModelParams& m_;
  const AssembledSequence& seq_;
  EngineOptions opts_;
  RowClasses rc_;
  std::size_t n_ = 0, d_ = 0;
  BoolMatrix allow_;
  std::vector<std::uint32_t> static_update_, static_kv_, dynamic_update_, all_update_, all_kv_;
  std::vector<std::vector<float>> mod0_;
  std::vector<float> h_, q_, k_, v_, scratch_a_, scratch_b_;
  KvCache cache_;
  std::size_t cache_builds_ = 0, steps_ = 0;
  std::uint64_t flops_ = 0;
};

}  // namespace hieredit
