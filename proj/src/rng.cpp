#include "facepipe/rng.hpp"

#include <limits>

#include "facepipe/error.hpp"

namespace facepipe {

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw ContractViolation("Rng::uniform: empty interval");
  for (;;) {
    const double x = lo + (hi - lo) * uniform01();
    if (x > lo && x < hi) return x;
  }
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ContractViolation("Rng::uniform_index: n must be positive");
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - (max % n);
  for (;;) {
    const std::uint64_t x = engine_();
    if (x < limit) return x % n;
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace facepipe
