#pragma once

#include <optional>
#include <span>
#include <vector>

#include "carbongrid/tensor.hpp"

namespace carbongrid {

// Differentiable primitives. Every op validates shapes, rejects non-finite
// results with NonFiniteError, and records a backward rule when any input
// requires a gradient.

/// 2-D convolution over an H×W×C_in input with a K×K×C_in×C_out kernel.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
              std::size_t padding = 0);

/// Mean over the spatial plane of an H×W×C tensor, giving C values.
Tensor global_avg_pool(const Tensor& input);

/// weight (d_out×d_in) · input (d_in) + bias (d_out).
Tensor dense(const Tensor& input, const Tensor& weight,
             const std::optional<Tensor>& bias = std::nullopt);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Softmax of a vector, computed with max-subtraction.
Tensor softmax(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor abs(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// out[h,w,c] = x[h,w,c] * gates[c].
Tensor scale_channels(const Tensor& x, const Tensor& gates);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor diagonal(const Tensor& x);

/// Divides each row of an N×m matrix by max(||row||, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps);

/// log Σ_j exp(x[i,j]) over the entries with mask[i*cols+j] set.
/// Every row must keep at least one entry.
Tensor logsumexp_rows(const Tensor& x, std::span<const bool> mask);

/// Stacks same-shaped tensors along a new leading axis. Empty slots become
/// zero blocks that carry no gradient.
Tensor stack(std::span<const std::optional<Tensor>> items, const Shape& item_shape);
Tensor stack(std::span<const Tensor> items);

}  // namespace carbongrid
