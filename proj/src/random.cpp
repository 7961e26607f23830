#include "carbongrid/random.hpp"

#include <cmath>
#include <numbers>

namespace carbongrid {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view subsystem) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : subsystem) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double standard_normal(Rng& rng) {
  // Box-Muller; u1 is kept away from zero.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

std::uint64_t poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean > 60.0) {
    const double draw = std::round(mean + std::sqrt(mean) * standard_normal(rng));
    return draw < 0.0 ? 0 : static_cast<std::uint64_t>(draw);
  }
  // Knuth's multiplication method.
  const double limit = std::exp(-mean);
  std::uint64_t k = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++k;
    p *= uniform01(rng);
  }
  return k;
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = uniform(rng, -bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace carbongrid
