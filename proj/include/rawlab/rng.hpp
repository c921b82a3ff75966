// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace rawlab {

/// Deterministic random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distribution transforms are implemented here rather than
/// taken from <random>, whose distributions differ between library vendors.
/// Seeds are scrambled with SplitMix64 so that nearby seeds give unrelated
/// streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream for item `index` of a job seeded with `seed`.
  /// Used to give every image its own generator so the processing order
  /// cannot change results.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi].
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via the Box-Muller transform (one cached spare).
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace rawlab
