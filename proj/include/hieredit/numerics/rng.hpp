// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "hieredit/numerics/tensor.hpp"

namespace hieredit {

// Counter-based generator: output k is a pure function of (seed, k), so a
// stream is reproducible on any platform and can be resumed from its counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_, counter_++); }

  // Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Box-Muller; consumes two counters per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent stream keyed by (seed, stream id).
  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_ ^ 0xa0761d6478bd642full, stream)); }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed * 0xd1b54a32d192ed03ull + (counter + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    z = (z ^ (z >> 32)) * 0xd6e8feb86659fd93ull;
    return z ^ (z >> 32);
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

inline Tensor rng_normal(Rng& rng, Shape shape) {
  Tensor out(std::move(shape));
  for (float& v : out.mutable_data()) v = static_cast<float>(rng.normal());
  return out;
}

inline Tensor rng_uniform(Rng& rng, Shape shape, float lo, float hi) {
  Tensor out(std::move(shape));
  for (float& v : out.mutable_data()) v = static_cast<float>(rng.uniform(lo, hi));
  return out;
}

}  // namespace hieredit
