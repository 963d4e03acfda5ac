// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "hieredit/numerics/tensor.hpp"

namespace hieredit {

// Per-layer keys (post-RoPE) and values of the static tokens of one sequence,
// so later denoising steps only project the dynamic tokens. `fingerprint` covers every input the static
// rows depend on; a mismatch on use means the cache is stale.
struct KvCache {
  std::vector<Tensor> keys;    // per layer, [n x width]; only static rows meaningful
  std::vector<Tensor> values;
  std::vector<std::uint32_t> static_rows;
  std::uint64_t fingerprint = 0;
  bool valid = false;

  bool empty() const { return static_rows.empty(); }
  void invalidate() { valid = false; }

  void check(std::uint64_t current) const {
    if (!valid) throw StaleCacheError("feature cache used after invalidation");
    if (current != fingerprint) throw StaleCacheError("static tokens changed since the feature cache was built");
  }
};

}  // namespace hieredit
