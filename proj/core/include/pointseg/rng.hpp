#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace pointseg {

// Deterministic random source. std::mt19937_64 has a standard-defined
// sequence but the standard distributions do not, so the value mappings are
// implemented here to keep runs reproducible across library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {
    // splitmix64 warm-up so nearby seeds decorrelate.
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi], inclusive.
  int64_t next_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Marsaglia polar method; consumes a variable number of draws but is a pure
  // function of the stream.
  double next_normal() {
    for (;;) {
      double u = 2.0 * next_double() - 1.0;
      double v = 2.0 * next_double() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_int(0, static_cast<int64_t>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Stable sub-stream derivation: rng for a named stage of a pipeline run.
  static uint64_t derive_seed(uint64_t base, const std::string& tag);

 private:
  uint64_t state_;
};

}  // namespace pointseg
