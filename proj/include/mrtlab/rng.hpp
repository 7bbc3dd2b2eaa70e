#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mrtlab {

// Deterministic xoshiro256** generator. All randomness in a run flows from
// one master seed through named streams (init/sampling/corpus/...), so a
// consumer can be added or removed without perturbing the others.
//
// Identical seed + identical call sequence => identical outputs, on every
// platform (no std::*_distribution anywhere).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derives an independent stream from a parent seed and a purpose label.
  static Rng stream(std::uint64_t master_seed, const std::string& name);

  // Derived per-item stream, e.g. one per corpus pair.
  Rng fork(std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n), n >= 1. Unbiased (rejection sampling).
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (no cached spare, draw order is fixed).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace mrtlab
