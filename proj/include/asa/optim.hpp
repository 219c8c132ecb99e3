#pragma once

#include <cstddef>
#include <vector>

#include "asa/params.hpp"

namespace asa {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// Linear warmup to the peak rate, then linear decay to zero at total_steps.
struct LinearSchedule {
    double peak_lr = 1e-3;
    std::size_t total_steps = 1;
    std::size_t warmup_steps = 0;

    double at(std::size_t step) const;
};

/// Adam with decoupled weight decay. Decay applies to matrices only
/// (rank >= 2); biases, norms and vectors are not decayed.
class AdamW {
public:
    AdamW(NamedParams params, AdamWConfig config);

    /// Applies one update from the gradients currently held by the
    /// parameters. Returns the pre-clip global gradient norm.
    double step(double lr);
    void zero_grad();
    double grad_norm() const;

    const NamedParams& params() const { return params_; }
    std::size_t steps_taken() const { return t_; }

private:
    NamedParams params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

}  // namespace asa
