#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "carbongrid/tensor.hpp"

namespace carbongrid {

/// Moment buffers and hyperparameters for bias-corrected Adam.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One Adam update of `params` using the supplied gradients.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state);

/// Same, reading each parameter's accumulated gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace carbongrid
