#include "asa/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace asa {

Tensor normal_param(Rng& rng, Shape shape, double stddev) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.normal(0.0, stddev);
    }
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

void zero_grads(const NamedParams& params) {
    for (const auto& [name, t] : params) {
        Tensor handle = t;
        handle.zero_grad();
    }
}

NamedParams clone_params(const NamedParams& params) {
    NamedParams out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) {
        out.emplace_back(name, t.clone());
    }
    return out;
}

void assign_params(const NamedParams& dst, const NamedParams& src) {
    if (dst.size() != src.size()) {
        throw std::invalid_argument("assign_params: parameter count mismatch");
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].first != src[i].first || dst[i].second.shape() != src[i].second.shape()) {
            throw std::invalid_argument("assign_params: mismatch at " + dst[i].first);
        }
        Tensor handle = dst[i].second;
        auto out = handle.mutable_data();
        std::copy(src[i].second.data().begin(), src[i].second.data().end(), out.begin());
    }
}

std::size_t count_values(const NamedParams& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) {
        n += t.numel();
    }
    return n;
}

}  // namespace asa
