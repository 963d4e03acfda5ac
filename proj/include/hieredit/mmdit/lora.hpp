// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>

#include "hieredit/numerics/ops.hpp"

namespace hieredit {

struct LoraFactors {
  Tensor a;  // [in x r]
  Tensor b;  // [r x out], zero at init
};

inline void check_lora_shapes(const Tensor& w, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || w.rank() != 2) throw DimensionError("lora: factors must be matrices");
  if (a.cols() != b.rows()) {
    throw ConfigError("lora rank mismatch: A has " + std::to_string(a.cols()) + " columns, B has " +
                      std::to_string(b.rows()) + " rows");
  }
  if (a.rows() != w.rows() || b.cols() != w.cols()) {
    throw DimensionError("lora: factors " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         " do not match base " + shape_str(w.shape()));
  }
}

// x W + scale * x A B.
inline Tensor lora_apply(const Tensor& w, const Tensor& a, const Tensor& b, const Tensor& x, float scale_by = 1.0f) {
  check_lora_shapes(w, a, b);
  return add(matmul(x, w), scale(matmul(matmul(x, a), b), scale_by));
}

// Same, with the adapter term weighted per row (0 switches it off for a row).
inline Tensor lora_apply_rows(const Tensor& w, const LoraFactors& f, const Tensor& x, float scale_by,
                              std::span<const float> rows) {
  check_lora_shapes(w, f.a, f.b);
  return add(matmul(x, w), row_scale(scale(matmul(matmul(x, f.a), f.b), scale_by), rows));
}

}  // namespace hieredit
