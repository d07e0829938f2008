#ifndef TUMORKIT_RANDOM_HPP
#define TUMORKIT_RANDOM_HPP

#include <cstdint>
#include <random>

namespace tumorkit {

/// Seeded generator whose draws are identical on every platform:
/// std::mt19937_64 output is fixed by the standard, and the mappings below
/// avoid the implementation-defined standard distributions.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

private:
  std::mt19937_64 engine_;
};

} // namespace tumorkit

#endif // TUMORKIT_RANDOM_HPP
