#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "carbongrid/random.hpp"
#include "carbongrid/tensor.hpp"

namespace testing {

using carbongrid::Rng;
using carbongrid::Shape;
using carbongrid::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<double> data(carbongrid::shape_size(shape));
  for (double& v : data) v = carbongrid::uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = carbongrid::uniform(rng, lo, hi);
  return v;
}

/// Per-element |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences (step h) of `loss` against the accumulated gradients
/// of `leaves`. `coords_per_leaf` = 0 checks every coordinate, otherwise a
/// seeded sample of that many per leaf.
inline GradCheck check_gradients(std::vector<Tensor> leaves, const std::function<Tensor()>& loss,
                                 double h = 1e-6, std::size_t coords_per_leaf = 0,
                                 std::uint64_t seed = 1) {
  for (Tensor& t : leaves) t.zero_grad();
  carbongrid::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : leaves) analytic.push_back(t.grad());

  GradCheck out;
  Rng rng(seed);
  carbongrid::NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& t = leaves[l];
    std::vector<std::size_t> coords;
    if (coords_per_leaf == 0 || coords_per_leaf >= t.size()) {
      for (std::size_t i = 0; i < t.size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < coords_per_leaf; ++k) {
        coords.push_back(carbongrid::uniform_index(rng, t.size()));
      }
    }
    std::vector<double> values(t.data().begin(), t.data().end());
    for (std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + h;
      t.assign(values);
      const double plus = loss().item();
      values[i] = original - h;
      t.assign(values);
      const double minus = loss().item();
      values[i] = original;
      t.assign(values);
      const double numeric = (plus - minus) / (2.0 * h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[l][i], numeric));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace testing
