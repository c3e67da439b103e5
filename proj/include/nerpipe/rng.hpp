// Small deterministic RNG used everywhere randomness is needed. Keeps training,
// augmentation and workload generation reproducible from a single seed without
// depending on implementation-defined standard library distributions.

#ifndef NERPIPE_RNG_HPP
#define NERPIPE_RNG_HPP

#include <cstdint>
#include <vector>

namespace nerpipe {

// splitmix64; passes through all 64-bit states, good enough for sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Modulo bias is negligible for the small n used here.
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Uniform in [0, 1).
  double next_double() { return (next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) { return lo + next_double() * (hi - lo); }

  bool next_bool(double p) { return next_double() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream, e.g. one per record or epoch.
  Rng fork(std::uint64_t stream) {
    Rng child(state_ ^ (0xA0761D6478BD642FULL * (stream + 1)));
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
};

}  // namespace nerpipe

#endif  // NERPIPE_RNG_HPP
