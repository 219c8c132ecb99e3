#pragma once

#include <string>
#include <utility>
#include <vector>

#include "asa/rng.hpp"
#include "asa/tensor.hpp"

namespace asa {

/// Ordered (name, tensor) list; the tensors are handles onto live parameters.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

Tensor normal_param(Rng& rng, Shape shape, double stddev);
Tensor zeros_param(Shape shape);
Tensor ones_param(Shape shape);

void zero_grads(const NamedParams& params);
/// Deep copy of the values; the copies require gradients like the originals.
NamedParams clone_params(const NamedParams& params);
/// Copies values of `src` into `dst` (same names and shapes in the same order).
void assign_params(const NamedParams& dst, const NamedParams& src);
std::size_t count_values(const NamedParams& params);

}  // namespace asa
