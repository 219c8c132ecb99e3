#include "asa/optim.hpp"

#include <algorithm>
#include <cmath>

namespace asa {

double LinearSchedule::at(std::size_t step) const {
    if (warmup_steps > 0 && step < warmup_steps) {
        return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) {
        return peak_lr;
    }
    const double remaining = static_cast<double>(total_steps - std::min(step, total_steps));
    return peak_lr * remaining / static_cast<double>(total_steps - warmup_steps);
}

AdamW::AdamW(NamedParams params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

double AdamW::grad_norm() const {
    double total = 0.0;
    for (const auto& [name, t] : params_) {
        for (double g : t.impl()->grad) {
            total += g * g;
        }
    }
    return std::sqrt(total);
}

double AdamW::step(double lr) {
    ++t_;
    const double norm = grad_norm();
    const double clip = config_.grad_clip > 0.0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        TensorImpl& impl = *params_[p].second.impl();
        const bool decay = impl.shape.size() >= 2 && config_.weight_decay > 0.0;
        auto& m = m_[p];
        auto& v = v_[p];
        const bool has_grad = !impl.grad.empty();
        for (std::size_t i = 0; i < impl.data.size(); ++i) {
            const double g = has_grad ? impl.grad[i] * clip : 0.0;
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
            if (decay) {
                impl.data[i] -= lr * config_.weight_decay * impl.data[i];
            }
            impl.data[i] -= lr * update;
        }
    }
    return norm;
}

void AdamW::zero_grad() { zero_grads(params_); }

}  // namespace asa
