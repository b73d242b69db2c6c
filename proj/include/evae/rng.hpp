// SPDX-License-Identifier: Apache-2.0
//
// Portable pseudo-random stream.
//
// Generator: xoshiro256** (Blackman & Vigna, 2018), state seeded by four
// successive outputs of SplitMix64 applied to the 64-bit seed. Both are fully
// specified by their published constants, so a given seed yields the same
// stream on every platform and in every language that implements them.
//
// Derived quantities:
//   uniform()  = (next() >> 11) * 2^-53, in [0, 1)
//   normal()   = Box-Muller on two uniforms, u1 mapped to (0, 1]; one output
//                per call (the sine branch is discarded) so the stream
//                position is independent of call history.
//   split(id)  = Rng(splitmix64(seed ^ splitmix64(id + 0x9E3779B97F4A7C15)))
//                child streams for named sub-tasks; does not advance *this.

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "evae/tensor.hpp"

namespace evae {

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t splitmix64_mix(std::uint64_t x);
// FNV-1a, used to turn stream names into split ids.
std::uint64_t fnv1a64(std::string_view s);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer in [0, n); Lemire's nearly-divisionless rejection.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  Rng split(std::uint64_t stream_id) const;
  Rng split(std::string_view name) const { return split(fnv1a64(name)); }

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_;
};

// Fisher-Yates with Rng::below.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = static_cast<decltype(i)>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(first[i], first[j]);
  }
}

}  // namespace evae
