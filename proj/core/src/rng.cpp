#include "pointseg/rng.hpp"

namespace pointseg {

uint64_t Rng::derive_seed(uint64_t base, const std::string& tag) {
  // FNV-1a over the tag, mixed with the base seed.
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  uint64_t z = base ^ h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace pointseg
