#include "lightformer/rng.hpp"

#include <cmath>

namespace lightformer::rng {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2)));
}

double uniform01(std::uint64_t key, std::uint64_t index) {
  const std::uint64_t r = splitmix64(key + index * 0xD1B54A32D192ED03ull);
  return static_cast<double>(r >> 11) * 0x1.0p-53;
}

double truncated_normal(std::uint64_t key, std::uint64_t index, double sigma,
                        double cutoff_sigmas) {
  const std::uint64_t sub = combine(key, index);
  for (std::uint64_t attempt = 0;; ++attempt) {
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform01(sub, 2 * attempt);
    const double u2 = uniform01(sub, 2 * attempt + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double z = r * std::cos(2.0 * M_PI * u2);
    if (std::abs(z) <= cutoff_sigmas) {
      return sigma * z;
    }
  }
}

}  // namespace lightformer::rng
