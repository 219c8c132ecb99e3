#pragma once

#include <vector>

#include "asa/training.hpp"
#include "finite_diff.hpp"

namespace asa::testing {

using BlockGrads = std::vector<std::vector<double>>;

inline BlockGrads collect_grads(const NamedParams& params) {
    BlockGrads out;
    for (const auto& [name, t] : params) {
        out.push_back(t.grad());
    }
    return out;
}

struct RoutingComparison {
    double min_trunk_cosine = 1.0;
    double min_adversary_cosine = 1.0;
    std::size_t blocks_compared = 0;
};

/// Compares the single-pass gradients against two separate passes on the
/// same gate sample: (A) gates detached, descent objective l_e + alpha*l_asa
/// for the trunk; (B) trunk frozen, no reversal, gradient of the negated
/// adversary objective for the adversary. Blocks whose oracle gradient is
/// exactly zero are skipped (cosine undefined).
inline RoutingComparison compare_routing(const Model& model, const AdversaryParams& adversary,
                                         const ClassificationBatch& batch, const AsaConfig& cfg, std::uint64_t seed) {
    const NamedParams theta = model.named_params();
    const NamedParams eta = adversary.named_params();
    auto zero_both = [&] {
        zero_grads(theta);
        zero_grads(eta);
    };

    zero_both();
    Rng r_single(seed);
    asa_backward(model, adversary, batch, cfg, r_single);
    const BlockGrads single_theta = collect_grads(theta);
    const BlockGrads single_eta = collect_grads(eta);

    zero_both();
    {
        Rng r(seed);
        Tape tape;
        TapeScope scope(tape);
        AsaForwardOptions opt;
        opt.detach_gates = true;
        const AsaOutput out = asa_forward(model, adversary, batch.tokens, cfg, r, opt);
        const FinetuneLossReport rep = finetune_objective(classifier_head(model, out.clean.cls_hidden),
                                                          classifier_head(model, out.biased.cls_hidden), batch.labels,
                                                          &out.gates, cfg);
        tape.backward(add(rep.l_e, scale(rep.l_asa, cfg.alpha)));
    }
    const BlockGrads oracle_theta = collect_grads(theta);

    zero_both();
    for (const auto& [name, t] : theta) {
        t.impl()->requires_grad = false;
    }
    {
        Rng r(seed);
        Tape tape;
        TapeScope scope(tape);
        AsaForwardOptions opt;
        opt.reverse_gradient = false;
        const AsaOutput out = asa_forward(model, adversary, batch.tokens, cfg, r, opt);
        const FinetuneLossReport rep = finetune_objective(classifier_head(model, out.clean.cls_hidden),
                                                          classifier_head(model, out.biased.cls_hidden), batch.labels,
                                                          &out.gates, cfg);
        tape.backward(scale(adversary_objective(rep.l_asa, rep.l_c, cfg), -1.0));
    }
    for (const auto& [name, t] : theta) {
        t.impl()->requires_grad = true;
    }
    const BlockGrads oracle_eta = collect_grads(eta);
    zero_both();

    RoutingComparison cmp;
    auto fold = [&](const BlockGrads& a, const BlockGrads& b, double& worst) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            double nb = 0.0;
            for (double v : b[i]) nb += v * v;
            if (nb == 0.0) continue;
            worst = std::min(worst, cosine(a[i], b[i]));
            ++cmp.blocks_compared;
        }
    };
    fold(single_theta, oracle_theta, cmp.min_trunk_cosine);
    fold(single_eta, oracle_eta, cmp.min_adversary_cosine);
    return cmp;
}

}  // namespace asa::testing
