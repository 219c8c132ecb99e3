#pragma once

#include <cstddef>
#include <vector>

#include "asa/params.hpp"
#include "asa/rng.hpp"
#include "asa/tensor.hpp"
#include "asa/transformer.hpp"

namespace asa {

struct AsaConfig {
    double tau = 0.3;          // weight of the masking-budget penalty
    double alpha = 1.0;        // weight of the clean/biased divergence
    double bin_temp = 1.0;     // binary-concrete relaxation temperature
    double neg_const = kDefaultNeg;
    double lambda_grl = 1.0;
    std::size_t d_adv = 0;     // 0 selects d_model / n_heads
    double init_keep_logit = 0.0;  // starting logit bias of the adversary towards keep

    std::size_t resolved_d_adv(const ModelConfig& model) const { return d_adv ? d_adv : model.d_head(); }
    void validate() const;
};

/// Per-layer query/key projections of the adversary, applied to the layer's
/// input hidden states: logits = (h W_q + b_q)(h W_k + b_k)^T / sqrt(d_adv).
struct AdversaryParams {
    std::size_t d_adv = 0;
    std::vector<Tensor> w_q, b_q, w_k, b_k;

    /// keep_logit > 0 biases every starting logit towards keep by that amount.
    /// stddev <= 0 selects 1 / sqrt(d_model).
    static AdversaryParams init(const ModelConfig& model, std::size_t d_adv, Rng& rng, double stddev = 0.0,
                                double keep_logit = 0.0);
    std::size_t n_layers() const { return w_q.size(); }
    NamedParams named_params() const;
};

/// Binary keep (1) / mask (0) decisions per layer, each [B, L, L].
struct GateSet {
    std::vector<Tensor> gates;
    std::vector<Tensor> logits;  // empty for gates that were not sampled from logits
    Tensor valid_mask;           // [B, L, L], 1 where query and key are both real tokens

    std::size_t n_layers() const { return gates.size(); }
};

struct MaskStats {
    std::vector<double> per_layer_masked_fraction;
    double overall_masked_fraction = 0.0;
};

/// 1 where both query and key are real tokens.
Tensor valid_pair_mask(const TokenBatch& batch);

Tensor adversary_logits(const Tensor& hidden, const AdversaryParams& params, std::size_t layer);

/// Hard straight-through binary-concrete sample per entry; padding pairs are
/// forced to keep.
GateSet sample_gates(std::vector<Tensor> logits, const AsaConfig& cfg, const Tensor& valid_mask, Rng& rng);

GateSet all_keep_gates(std::size_t n_layers, const Tensor& valid_mask);

/// Mean over layers of (masked valid pairs / valid pairs); differentiable
/// through the straight-through path. Throws on an empty valid mask.
Tensor masked_fraction_penalty(const GateSet& gates);

MaskStats mask_stats(const GateSet& gates);

struct AsaForwardOptions {
    /// Route the gates into the trunk through grad_reverse(lambda_grl).
    bool reverse_gradient = true;
    /// Feed the trunk constant gates (the adversary gets no gradient).
    bool detach_gates = false;
    /// Skip the adversary and use these gates instead.
    const GateSet* forced_gates = nullptr;
};

struct AsaOutput {
    EncoderOutput clean;
    EncoderOutput biased;
    GateSet gates;
};

/// Clean pass recording h^i, one adversary pass on detached h^i, then a
/// biased pass with the sampled gates.
AsaOutput asa_forward(const Model& model, const AdversaryParams& adversary, const TokenBatch& batch,
                      const AsaConfig& cfg, Rng& rng, const AsaForwardOptions& options = {});

}  // namespace asa
