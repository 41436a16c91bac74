#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fairehr {

/// Seeded generator with portable distributions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The std:: distribution adaptors are implementation-defined, so
/// every draw here is derived from raw engine output with a pinned formula:
///   uniform()      = (u64 >> 11) * 2^-53
///   uniform_int(n) = rejection sampling on u64 against the largest multiple of n
///   normal()       = Box-Muller, cosine branch only (one normal per two uniforms)
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates using uniform_int.
  template <typename T> void shuffle(std::vector<T> &items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a named sub-stream, e.g. derive_seed(global, patient_id).
/// FNV-1a over the bytes of `key`, combined with `seed` through mix64.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);

} // namespace fairehr
