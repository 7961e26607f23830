#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "carbongrid/tensor.hpp"

namespace carbongrid {

using Rng = std::mt19937_64;

/// Stable sub-seed for a named subsystem: FNV-1a of the name mixed with the
/// root seed through splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view subsystem);

double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
std::uint64_t poisson(Rng& rng, double mean);

/// Fisher-Yates shuffle with the portable index draw above.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Uniform He-style initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace carbongrid
