#include "carbongrid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "carbongrid/errors.hpp"

namespace carbongrid {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const Tensor* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const Tensor* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
double* parent_grad(Node& self, std::size_t i) {
  Node& parent = *self.parents[i];
  if (!parent.requires_grad) return nullptr;
  return parent.grad_buffer().data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, [deriv](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& in = self.parents[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * deriv(in[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t h = input.extent(0), w = input.extent(1), cin = input.extent(2);
  const std::size_t k = kernel.extent(0), cout = kernel.extent(3);
  if (kernel.extent(1) != k) throw DimensionError("conv2d: kernel must be square");
  if (kernel.extent(2) != cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.extent(2)) +
                         " input channels, input has " + std::to_string(cin));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;

  // Visits every (output, tap) pair whose input position is inside the image.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t in_base = (static_cast<std::size_t>(iy) * w +
                                         static_cast<std::size_t>(ix)) * cin;
            const std::size_t k_base = (ky * k + kx) * cin * cout;
            const std::size_t out_base = (oy * ow + ox) * cout;
            fn(in_base, k_base, out_base);
          }
        }
      }
    }
  };

  std::vector<double> out(oh * ow * cout, 0.0);
  {
    const auto in = input.data();
    const auto ker = kernel.data();
    for_each_tap([&](std::size_t in_base, std::size_t k_base, std::size_t out_base) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double v = in[in_base + ci];
        if (v == 0.0) continue;
        const double* krow = ker.data() + k_base + ci * cout;
        double* orow = out.data() + out_base;
        for (std::size_t co = 0; co < cout; ++co) orow[co] += v * krow[co];
      }
    });
  }
  return make_result(
      "conv2d", Shape{oh, ow, cout}, std::move(out), {&input, &kernel},
      [for_each_tap, cin, cout](Node& self) {
        double* gin = parent_grad(self, 0);
        double* gker = parent_grad(self, 1);
        const auto& in = self.parents[0]->data;
        const auto& ker = self.parents[1]->data;
        const auto& g = self.grad;
        for_each_tap([&](std::size_t in_base, std::size_t k_base, std::size_t out_base) {
          const double* grow = g.data() + out_base;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* krow = ker.data() + k_base + ci * cout;
            if (gin) {
              double acc = 0.0;
              for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * krow[co];
              gin[in_base + ci] += acc;
            }
            if (gker) {
              const double v = in[in_base + ci];
              double* gk = gker + k_base + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) gk[co] += grow[co] * v;
            }
          }
        });
      });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 3, "global_avg_pool");
  const std::size_t plane = input.extent(0) * input.extent(1);
  const std::size_t c = input.extent(2);
  if (plane == 0) throw DimensionError("global_avg_pool: empty spatial plane");
  std::vector<double> out(c, 0.0);
  const auto in = input.data();
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[p * c + ch];
  }
  for (double& v : out) v /= static_cast<double>(plane);
  return make_result("global_avg_pool", Shape{c}, std::move(out), {&input},
                     [plane, c](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t p = 0; p < plane; ++p) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           gx[p * c + ch] += self.grad[ch] * inv;
                         }
                       }
                     });
}

Tensor dense(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(input, 1, "dense input");
  require_rank(weight, 2, "dense weight");
  const std::size_t dout = weight.extent(0), din = weight.extent(1);
  if (input.extent(0) != din) {
    throw DimensionError("dense: weight " + shape_string(weight.shape()) +
                         " incompatible with input " + shape_string(input.shape()));
  }
  if (bias) {
    require_rank(*bias, 1, "dense bias");
    if (bias->extent(0) != dout) throw DimensionError("dense: bias length mismatch");
  }
  std::vector<double> out(dout, 0.0);
  const auto x = input.data();
  const auto wt = weight.data();
  for (std::size_t o = 0; o < dout; ++o) {
    double acc = bias ? (*bias)[o] : 0.0;
    for (std::size_t i = 0; i < din; ++i) acc += wt[o * din + i] * x[i];
    out[o] = acc;
  }
  const Tensor bias_or_empty = bias ? *bias : Tensor::zeros(Shape{dout});
  return make_result("dense", Shape{dout}, std::move(out), {&input, &weight, &bias_or_empty},
                     [din, dout](Node& self) {
                       double* gx = parent_grad(self, 0);
                       double* gw = parent_grad(self, 1);
                       double* gb = parent_grad(self, 2);
                       const auto& x = self.parents[0]->data;
                       const auto& wt = self.parents[1]->data;
                       for (std::size_t o = 0; o < dout; ++o) {
                         const double g = self.grad[o];
                         if (gb) gb[o] += g;
                         for (std::size_t i = 0; i < din; ++i) {
                           if (gx) gx[i] += g * wt[o * din + i];
                           if (gw) gw[o * din + i] += g * x[i];
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double out) { return out * (1.0 - out); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double out) { return 1.0 - out * out; });
}

Tensor softmax(const Tensor& x) {
  require_rank(x, 1, "softmax");
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  const auto in = x.data();
  const double mx = *std::max_element(in.begin(), in.end());
  std::vector<double> out(in.size());
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return make_result("softmax", x.shape(), std::move(out), {&x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < self.data.size(); ++i) dot += self.grad[i] * self.data[i];
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      gx[i] += self.data[i] * (self.grad[i] - dot);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", Shape{}, {total}, {&x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor scale_channels(const Tensor& x, const Tensor& gates) {
  require_rank(x, 3, "scale_channels input");
  require_rank(gates, 1, "scale_channels gates");
  const std::size_t c = x.extent(2);
  if (gates.extent(0) != c) throw DimensionError("scale_channels: gate count mismatch");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * gates[i % c];
  return make_result("scale_channels", x.shape(), std::move(out), {&x, &gates},
                     [c](Node& self) {
                       const auto& xv = self.parents[0]->data;
                       const auto& sv = self.parents[1]->data;
                       double* gx = parent_grad(self, 0);
                       double* gs = parent_grad(self, 1);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         if (gx) gx[i] += self.grad[i] * sv[i % c];
                         if (gs) gs[i % c] += self.grad[i] * xv[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.extent(0), c = x.extent(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return make_result("transpose", Shape{c, r}, std::move(out), {&x}, [r, c](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * b[p * m + j];
    }
  }
  return make_result("matmul", Shape{n, m}, std::move(out), {&a, &b}, [n, k, m](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < m; ++j) {
          const double g = self.grad[i * m + j];
          if (ga) ga[i * k + p] += g * bv[p * m + j];
          if (gb) gb[p * m + j] += g * av[i * k + p];
        }
      }
    }
  });
}

Tensor diagonal(const Tensor& x) {
  require_rank(x, 2, "diagonal");
  const std::size_t n = x.extent(0);
  if (x.extent(1) != n) throw DimensionError("diagonal: matrix must be square");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i * n + i];
  return make_result("diagonal", Shape{n}, std::move(out), {&x}, [n](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += self.grad[i];
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  std::vector<double> norms(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += x[r * cols + c] * x[r * cols + c];
    norms[r] = std::sqrt(sq);
    const double denom = std::max(norms[r], eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / denom;
  }
  return make_result("l2_normalize_rows", x.shape(), std::move(out), {&x},
                     [rows, cols, eps, norms](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.data.data() + r * cols;
                         const double* g = self.grad.data() + r * cols;
                         if (norms[r] > eps) {
                           double dot = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                           for (std::size_t c = 0; c < cols; ++c) {
                             gx[r * cols + c] += (g[c] - y[c] * dot) / norms[r];
                           }
                         } else {
                           for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] / eps;
                         }
                       }
                     });
}

Tensor logsumexp_rows(const Tensor& x, std::span<const bool> mask) {
  require_rank(x, 2, "logsumexp_rows");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  if (mask.size() != x.size()) throw DimensionError("logsumexp_rows: mask size mismatch");
  std::vector<bool> keep(mask.begin(), mask.end());
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep[r * cols + c]) mx = std::max(mx, x[r * cols + c]);
    }
    if (!std::isfinite(mx)) throw ContractError("logsumexp_rows: row with every entry masked");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep[r * cols + c]) total += std::exp(x[r * cols + c] - mx);
    }
    out[r] = mx + std::log(total);
  }
  return make_result("logsumexp_rows", Shape{rows}, std::move(out), {&x},
                     [rows, cols, keep](Node& self) {
                       double* gx = parent_grad(self, 0);
                       if (!gx) return;
                       const auto& in = self.parents[0]->data;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           if (!keep[r * cols + c]) continue;
                           gx[r * cols + c] +=
                               self.grad[r] * std::exp(in[r * cols + c] - self.data[r]);
                         }
                       }
                     });
}

Tensor stack(std::span<const std::optional<Tensor>> items, const Shape& item_shape) {
  if (items.empty()) throw DimensionError("stack: no items");
  const std::size_t block = shape_size(item_shape);
  Shape shape{items.size()};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  std::vector<double> out(items.size() * block, 0.0);
  auto node = std::make_shared<Node>();
  node->op = "stack";
  bool needs_grad = false;
  std::vector<std::size_t> slot_of_parent;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i]) continue;
    const Tensor& t = *items[i];
    if (t.shape() != item_shape) {
      throw DimensionError("stack: item shape " + shape_string(t.shape()) + " != " +
                           shape_string(item_shape));
    }
    std::copy(t.data().begin(), t.data().end(), out.begin() + i * block);
    if (grad_enabled() && t.requires_grad()) {
      needs_grad = true;
      node->parents.push_back(t.node());
      slot_of_parent.push_back(i);
    }
  }
  node->shape = std::move(shape);
  node->data = std::move(out);
  if (needs_grad) {
    node->requires_grad = true;
    node->backward = [slot_of_parent, block](Node& self) {
      for (std::size_t p = 0; p < slot_of_parent.size(); ++p) {
        double* g = self.parents[p]->grad_buffer().data();
        const double* src = self.grad.data() + slot_of_parent[p] * block;
        for (std::size_t i = 0; i < block; ++i) g[i] += src[i];
      }
    };
  } else {
    node->parents.clear();
  }
  return Tensor::from_node(std::move(node));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw DimensionError("stack: no items");
  std::vector<std::optional<Tensor>> slots(items.begin(), items.end());
  return stack(slots, items.front().shape());
}

}  // namespace carbongrid
