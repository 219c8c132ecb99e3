#pragma once

#include <vector>

#include "asa/ops.hpp"
#include "asa/rng.hpp"
#include "asa/tensor.hpp"

namespace asa::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double stddev = 1.0, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, stddev);
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor positive_tensor(Rng& rng, Shape shape, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.uniform(0.5, 2.0);
    }
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Scalar probe sum(w * y) with fixed random weights, so every output entry
/// contributes a distinct amount to the gradient.
inline Tensor probe(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(rng, y.shape(), 1.0, false)));
}

inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace asa::testing
