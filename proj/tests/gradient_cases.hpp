#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "carbongrid/model.hpp"
#include "carbongrid/ops.hpp"
#include "carbongrid/synth.hpp"
#include "support.hpp"

namespace testing {

using namespace carbongrid;

struct GradientCase {
  std::string name;
  std::function<GradCheck(Rng&)> run;
};

inline std::vector<GradientCase> primitive_cases() {
  std::vector<GradientCase> cases;
  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> op, Shape shape) {
    cases.push_back({name, [op, shape](Rng& rng) {
                       Tensor x = random_tensor(shape, rng);
                       const Tensor r = random_tensor(op(x.detach()).shape(), rng, -1, 1, false);
                       return check_gradients({x}, [&] { return sum(mul(op(x), r)); });
                     }});
  };
  cases.push_back({"conv2d stride1 pad1", [](Rng& rng) {
                     Tensor x = random_tensor({4, 4, 2}, rng);
                     Tensor k = random_tensor({3, 3, 2, 2}, rng);
                     const Tensor r = random_tensor({4, 4, 2}, rng, -1, 1, false);
                     return check_gradients({x, k}, [&] { return sum(mul(conv2d(x, k, 1, 1), r)); });
                   }});
  cases.push_back({"conv2d stride2 pad0", [](Rng& rng) {
                     Tensor x = random_tensor({5, 5, 2}, rng);
                     Tensor k = random_tensor({3, 3, 2, 3}, rng);
                     const Tensor r = random_tensor({2, 2, 3}, rng, -1, 1, false);
                     return check_gradients({x, k}, [&] { return sum(mul(conv2d(x, k, 2, 0), r)); });
                   }});
  unary("global_avg_pool", [](const Tensor& x) { return global_avg_pool(x); }, {2, 3, 2});
  cases.push_back({"dense with bias", [](Rng& rng) {
                     Tensor x = random_tensor({4}, rng);
                     Tensor w = random_tensor({3, 4}, rng);
                     Tensor b = random_tensor({3}, rng);
                     const Tensor r = random_tensor({3}, rng, -1, 1, false);
                     return check_gradients({x, w, b}, [&] { return sum(mul(dense(x, w, b), r)); });
                   }});
  unary("relu", [](const Tensor& x) { return relu(x); }, {6});
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, {5});
  unary("tanh", [](const Tensor& x) { return carbongrid::tanh(x); }, {5});
  unary("softmax", [](const Tensor& x) { return softmax(x); }, {5});
  unary("scale", [](const Tensor& x) { return scale(x, -2.5); }, {4});
  unary("abs", [](const Tensor& x) { return carbongrid::abs(x); }, {6});
  unary("sum", [](const Tensor& x) { return sum(x); }, {2, 3});
  unary("mean", [](const Tensor& x) { return mean(x); }, {2, 3});
  unary("reshape", [](const Tensor& x) { return reshape(x, {3, 2}); }, {2, 3});
  unary("transpose", [](const Tensor& x) { return transpose(x); }, {2, 3});
  unary("diagonal", [](const Tensor& x) { return diagonal(x); }, {3, 3});
  unary("l2_normalize_rows", [](const Tensor& x) { return l2_normalize_rows(x, 1e-12); }, {2, 3});
  unary("logsumexp_rows masked",
        [](const Tensor& x) {
          static const bool mask[9] = {false, true, true, true, false, true, true, true, false};
          return logsumexp_rows(x, std::span<const bool>(mask, 9));
        },
        {3, 3});
  auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                    Shape sa, Shape sb) {
    cases.push_back({name, [op, sa, sb](Rng& rng) {
                       Tensor a = random_tensor(sa, rng);
                       Tensor b = random_tensor(sb, rng);
                       const Tensor r =
                           random_tensor(op(a.detach(), b.detach()).shape(), rng, -1, 1, false);
                       return check_gradients({a, b}, [&] { return sum(mul(op(a, b), r)); });
                     }});
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, {5}, {5});
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, {5}, {5});
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, {5}, {5});
  binary("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); }, {2, 3}, {3, 2});
  binary("scale_channels", [](const Tensor& a, const Tensor& b) { return scale_channels(a, b); },
         {2, 2, 2}, {2});
  binary("stack",
         [](const Tensor& a, const Tensor& b) {
           const std::vector<Tensor> items{a, b};
           return stack(items);
         },
         {3}, {3});
  binary("stack with gaps",
         [](const Tensor& a, const Tensor& b) {
           const std::vector<std::optional<Tensor>> items{a, std::nullopt, b};
           return stack(items, Shape{3});
         },
         {3}, {3});
  return cases;
}

/// Tiny model and a 3×3 region for end-to-end checks (all dims <= 8).
struct MicroSetup {
  ModelConfig config;
  RegionDataset dataset;
};

inline MicroSetup micro_setup(std::uint64_t seed) {
  SynthSpec spec;
  spec.grid_rows = 3;
  spec.grid_cols = 3;
  spec.categories = 3;
  spec.image_height = spec.image_width = 8;
  spec.poi_height = spec.poi_width = 8;
  spec.poi_intensity = 8.0;
  spec.seed = seed;
  spec.split.train_fraction = 1.0 / 3.0;
  spec.split.valid_fraction = 1.0 / 3.0;
  spec.split.test_fraction = 1.0 / 3.0;
  ModelConfig c;
  c.embed_dim = 4;
  c.neighborhood = 3;
  c.categories = 3;
  c.image_height = c.image_width = 8;
  c.poi_height = c.poi_width = 8;
  c.image_channels = 4;
  c.image_blocks = 1;
  c.poi_channels = {4};
  c.neighborhood_channels = 4;
  c.attention_dim = 4;
  c.head_hidden = 4;
  c.se_ratio = 2;
  return {c, synth_region(spec).dataset};
}

/// Finite-difference check of the combined loss (MAE + alpha·NT-Xent) on a
/// 2-cell micro-batch, sampling `coords` coordinates per parameter tensor.
inline GradCheck end_to_end_check(std::uint64_t seed, std::size_t coords = 3) {
  MicroSetup setup = micro_setup(seed);
  CarbonModel model(setup.config, seed);
  Rng rng(derive_seed(seed, "perturb"));
  // Nudge the zero-initialized biases so every path is exercised.
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    Tensor& t = model.parameters().tensors()[i];
    std::vector<double> v(t.data().begin(), t.data().end());
    for (double& x : v) x += uniform(rng, -0.1, 0.1);
    t.assign(v);
  }
  const std::size_t first = uniform_index(rng, 9);
  const std::vector<std::size_t> cells{first, (first + 1 + uniform_index(rng, 8)) % 9};
  std::vector<double> targets{1.3, 2.9};
  auto loss = [&] {
    const BatchOutput out = model.forward(setup.dataset, cells);
    return total_loss(out.predictions, Tensor::vector(targets), out.image_embeddings,
                      out.poi_embeddings, 0.1, 5, 0, 0.5)
        .total;
  };
  std::vector<Tensor> leaves(model.parameters().tensors().begin(),
                             model.parameters().tensors().end());
  return check_gradients(leaves, loss, 1e-6, coords, seed);
}

}  // namespace testing
