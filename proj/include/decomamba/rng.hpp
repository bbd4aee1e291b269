#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace dm {

/// FNV-1a over the bytes of `text`; stable across platforms.
uint64_t stable_hash(std::string_view text, uint64_t seed = 0);

/// Seeded generator whose every derived value is platform-independent:
/// std::mt19937_64 output is fully specified, and the conversions below do
/// not go through the implementation-defined std:: distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Independent stream for a named consumer (parameter path, sample id).
  static Rng derive(uint64_t seed, std::string_view name) { return Rng(stable_hash(name, seed)); }

  uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  bool coin(double p = 0.5) { return uniform() < p; }

  template <typename V>
  void shuffle(std::vector<V>& values) {
    for (size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dm
