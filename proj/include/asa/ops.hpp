#pragma once

#include <cstddef>
#include <vector>

#include "asa/rng.hpp"
#include "asa/tensor.hpp"

// Differentiable primitives. Operands must match exactly; the only implicit
// broadcast is a rank-0 scalar against a tensor. Every op records its
// backward on the active tape (see TapeScope).
namespace asa {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// [..., m, k] x [k, n] -> [..., m, n], or batched [..., m, k] x [..., k, n]
/// with identical leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [..., n] + bias [n].
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor transpose_last_two(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Normalizes over the last axis, then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);

/// Rows of `table` [V, d] selected by `ids`; result shape ids_shape + [d].
Tensor embedding(const Tensor& table, const std::vector<int>& ids, const Shape& ids_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
/// Rows of x along axis 0.
Tensor take_rows(const Tensor& x, const std::vector<std::size_t>& rows);
/// x [..., C] -> [...], picking index[i] from the i-th last-axis slice.
Tensor gather_last(const Tensor& x, const std::vector<int>& index);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over the last axis.
Tensor sum_last(const Tensor& x);

/// scores [B, H, L, L] + bias [B, L, L] broadcast over heads.
Tensor add_head_bias(const Tensor& scores, const Tensor& bias);

/// Identity forward; backward multiplies the upstream gradient by -lambda.
Tensor grad_reverse(const Tensor& x, double lambda);

/// Logistic-noise relaxation of Bernoulli(sigmoid(logits)):
///   s = sigmoid((logits + log u - log(1 - u)) / temp),  u ~ U(0, 1).
/// With `hard`, the forward value is 1[s > 0.5] and the backward pass uses
/// ds/dlogits (straight-through).
Tensor binary_concrete(const Tensor& logits, double temp, Rng& rng, bool hard);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

}  // namespace asa
