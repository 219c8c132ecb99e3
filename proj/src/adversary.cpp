#include "asa/adversary.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "asa/ops.hpp"

namespace asa {

void AsaConfig::validate() const {
    if (!(tau >= 0.0)) {
        throw std::invalid_argument("AsaConfig: tau must be nonnegative");
    }
    if (!(bin_temp > 0.0)) {
        throw std::invalid_argument("AsaConfig: bin_temp must be positive");
    }
    if (!(neg_const < 0.0)) {
        throw std::invalid_argument("AsaConfig: neg_const must be negative");
    }
    if (!(init_keep_logit >= 0.0) || !std::isfinite(init_keep_logit)) {
        throw std::invalid_argument("AsaConfig: init_keep_logit must be finite and >= 0");
    }
    if (!(lambda_grl > 0.0)) {
        throw std::invalid_argument("AsaConfig: lambda_grl must be positive");
    }
    if (!std::isfinite(alpha)) {
        throw std::invalid_argument("AsaConfig: alpha must be finite");
    }
}

AdversaryParams AdversaryParams::init(const ModelConfig& model, std::size_t d_adv, Rng& rng, double stddev,
                                      double keep_logit) {
    if (!std::isfinite(keep_logit) || keep_logit < 0.0) {
        throw std::invalid_argument("AdversaryParams::init: keep_logit must be finite and >= 0");
    }
    if (stddev <= 0.0) {
        stddev = 1.0 / std::sqrt(static_cast<double>(model.d_model));
    }
    AdversaryParams p;
    p.d_adv = d_adv;
    // b_q = b_k = c * ones gives every pair a starting logit of c^2 * d_adv / sqrt(d_adv).
    const double c = std::sqrt(keep_logit / std::sqrt(static_cast<double>(d_adv)));
    for (std::size_t i = 0; i < model.n_layers; ++i) {
        p.w_q.push_back(normal_param(rng, {model.d_model, d_adv}, stddev));
        p.b_q.push_back(Tensor(Shape{d_adv}, std::vector<double>(d_adv, c), true));
        p.w_k.push_back(normal_param(rng, {model.d_model, d_adv}, stddev));
        p.b_k.push_back(Tensor(Shape{d_adv}, std::vector<double>(d_adv, c), true));
    }
    return p;
}

NamedParams AdversaryParams::named_params() const {
    NamedParams out;
    for (std::size_t i = 0; i < n_layers(); ++i) {
        const std::string p = "adversary." + std::to_string(i) + ".";
        out.emplace_back(p + "w_q", w_q[i]);
        out.emplace_back(p + "b_q", b_q[i]);
        out.emplace_back(p + "w_k", w_k[i]);
        out.emplace_back(p + "b_k", b_k[i]);
    }
    return out;
}

Tensor valid_pair_mask(const TokenBatch& batch) {
    const std::size_t l = batch.len;
    std::vector<double> v(batch.batch * l * l, 0.0);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t i = 0; i < l; ++i) {
            for (std::size_t j = 0; j < l; ++j) {
                v[(b * l + i) * l + j] = batch.is_valid(b, i) && batch.is_valid(b, j) ? 1.0 : 0.0;
            }
        }
    }
    return Tensor({batch.batch, l, l}, std::move(v));
}

Tensor adversary_logits(const Tensor& hidden, const AdversaryParams& params, std::size_t layer) {
    if (layer >= params.n_layers()) {
        throw std::out_of_range("adversary_logits: layer " + std::to_string(layer) + " out of range (" +
                                std::to_string(params.n_layers()) + " layers)");
    }
    if (hidden.rank() != 3) {
        throw ShapeError("adversary_logits: hidden must be [B, L, d], got " + shape_str(hidden.shape()));
    }
    const Tensor q = add_bias(matmul(hidden, params.w_q[layer]), params.b_q[layer]);
    const Tensor k = add_bias(matmul(hidden, params.w_k[layer]), params.b_k[layer]);
    return scale(matmul(q, transpose_last_two(k)), 1.0 / std::sqrt(static_cast<double>(params.d_adv)));
}

GateSet sample_gates(std::vector<Tensor> logits, const AsaConfig& cfg, const Tensor& valid_mask, Rng& rng) {
    GateSet out;
    out.valid_mask = valid_mask;
    if (!(cfg.bin_temp > 0.0)) {
        throw std::invalid_argument("sample_gates: temperature must be positive, got " + std::to_string(cfg.bin_temp));
    }
    const auto vd = valid_mask.data();
    const double temp = cfg.bin_temp;
    for (const Tensor& l : logits) {
        if (l.shape() != valid_mask.shape()) {
            throw ShapeError("sample_gates", valid_mask.shape(), l.shape());
        }
        // Hard binary concrete with a straight-through backward on valid pairs;
        // padded pairs are forced to keep and pass no gradient. One noise draw
        // per entry, valid or not, so the stream position is shape-determined.
        const auto ld = l.data();
        std::vector<double> scaled_slope(ld.size());
        std::vector<double> gate(ld.size());
        for (std::size_t i = 0; i < ld.size(); ++i) {
            const double u = rng.uniform();
            const double soft = 1.0 / (1.0 + std::exp(-(ld[i] + std::log(u / (1.0 - u))) / temp));
            gate[i] = vd[i] > 0.0 ? (soft > 0.5 ? 1.0 : 0.0) : 1.0;
            scaled_slope[i] = vd[i] * soft * (1.0 - soft) / temp;
        }
        auto li = l.impl();
        out.gates.push_back(make_result("sample_gate", l.shape(), std::move(gate), {&l},
                                        [li, slope = std::move(scaled_slope)](TensorImpl& o) {
                                            if (!li->requires_grad) {
                                                return;
                                            }
                                            auto g = li->grad_buffer();
                                            for (std::size_t i = 0; i < g.size(); ++i) {
                                                g[i] += o.grad[i] * slope[i];
                                            }
                                        }));
    }
    out.logits = std::move(logits);
    return out;
}

GateSet all_keep_gates(std::size_t n_layers, const Tensor& valid_mask) {
    GateSet out;
    out.valid_mask = valid_mask;
    for (std::size_t i = 0; i < n_layers; ++i) {
        out.gates.push_back(Tensor::full(valid_mask.shape(), 1.0));
    }
    return out;
}

namespace {
double valid_count(const Tensor& valid_mask) {
    double n = 0.0;
    for (double v : valid_mask.data()) {
        n += v;
    }
    return n;
}
}  // namespace

Tensor masked_fraction_penalty(const GateSet& gates) {
    const double n_valid = valid_count(gates.valid_mask);
    if (n_valid == 0.0) {
        throw std::invalid_argument("masked_fraction_penalty: no valid attention pairs");
    }
    if (gates.gates.empty()) {
        throw std::invalid_argument("masked_fraction_penalty: empty gate set");
    }
    Tensor total;
    for (const Tensor& g : gates.gates) {
        // masked count = sum(valid * (1 - g)) = n_valid - sum(valid * g)
        const Tensor frac = scale(add_scalar(scale(sum(mul(g, gates.valid_mask)), -1.0), n_valid), 1.0 / n_valid);
        total = total.defined() ? add(total, frac) : frac;
    }
    return scale(total, 1.0 / static_cast<double>(gates.gates.size()));
}

MaskStats mask_stats(const GateSet& gates) {
    MaskStats s;
    const double n_valid = valid_count(gates.valid_mask);
    double masked_total = 0.0;
    for (const Tensor& g : gates.gates) {
        double masked = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            if (gates.valid_mask[i] != 0.0 && g[i] < 0.5) {
                masked += 1.0;
            }
        }
        masked_total += masked;
        s.per_layer_masked_fraction.push_back(n_valid > 0.0 ? masked / n_valid : 0.0);
    }
    const double denom = n_valid * static_cast<double>(gates.gates.size());
    s.overall_masked_fraction = denom > 0.0 ? masked_total / denom : 0.0;
    return s;
}

AsaOutput asa_forward(const Model& model, const AdversaryParams& adversary, const TokenBatch& batch,
                      const AsaConfig& cfg, Rng& rng, const AsaForwardOptions& options) {
    if (adversary.n_layers() != model.config.n_layers) {
        throw std::invalid_argument("asa_forward: adversary has " + std::to_string(adversary.n_layers()) +
                                    " layers, model has " + std::to_string(model.config.n_layers));
    }
    AsaOutput out;
    ForwardOptions fwd;
    fwd.neg = cfg.neg_const;
    fwd.rng = &rng;
    fwd.training = true;
    out.clean = encoder_forward(model, batch, fwd);

    if (options.forced_gates != nullptr) {
        out.gates = *options.forced_gates;
    } else {
        std::vector<Tensor> logits;
        for (std::size_t i = 0; i < model.config.n_layers; ++i) {
            logits.push_back(adversary_logits(out.clean.layer_inputs[i].detach(), adversary, i));
        }
        out.gates = sample_gates(std::move(logits), cfg, valid_pair_mask(batch), rng);
    }

    std::vector<Tensor> trunk_gates;
    for (const Tensor& g : out.gates.gates) {
        if (options.detach_gates) {
            trunk_gates.push_back(g.detach());
        } else if (options.reverse_gradient) {
            trunk_gates.push_back(grad_reverse(g, cfg.lambda_grl));
        } else {
            trunk_gates.push_back(g);
        }
    }
    fwd.gates = &trunk_gates;
    out.biased = encoder_forward(model, batch, fwd);
    return out;
}

}  // namespace asa
