#include "carbongrid/adam.hpp"

#include <cmath>

#include "carbongrid/errors.hpp"

namespace carbongrid {

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
               AdamState& state) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.first_moment[i].size() != params[i].size()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    std::vector<double> values(params[i].data().begin(), params[i].data().end());
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[i][j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    params[i].assign(values);
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state);
}

}  // namespace carbongrid
