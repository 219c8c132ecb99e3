#include "asa/training.hpp"

#include <cmath>
#include <iostream>

#include "asa/ops.hpp"

namespace asa {

namespace {

void require_finite(const Tensor& loss, const char* step_name) {
    const double v = loss.item();
    if (!std::isfinite(v)) {
        throw NonFiniteLoss(std::string(step_name) + ": non-finite loss " + std::to_string(v) +
                            "; step aborted before any update");
    }
}

void require_model_optimizer(const StepOptimizers& opt) {
    if (opt.model == nullptr) {
        throw std::invalid_argument("training step: model optimizer is required");
    }
}

void zero_all(const StepOptimizers& opt) {
    opt.model->zero_grad();
    if (opt.adversary != nullptr) {
        opt.adversary->zero_grad();
    }
}

void record_gates(MetricsRecord& r, const GateSet& gates) {
    const MaskStats s = mask_stats(gates);
    r.masked_fraction = s.per_layer_masked_fraction;
    r.set("masked_fraction_mean", s.overall_masked_fraction);
}

ForwardOptions training_forward(Rng& rng) {
    ForwardOptions f;
    f.rng = &rng;
    f.training = true;
    return f;
}

std::size_t predicted_class(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.dim(-1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
        if (logits[row * c + k] > logits[row * c + best]) {
            best = k;
        }
    }
    return best;
}

}  // namespace

void EmbedAtConfig::validate() const {
    if (!(epsilon >= 0.0)) {
        throw std::invalid_argument("EmbedAtConfig: epsilon must be nonnegative");
    }
    if (!(step_size > 0.0)) {
        throw std::invalid_argument("EmbedAtConfig: step_size must be positive");
    }
    if (k_steps < 1) {
        throw std::invalid_argument("EmbedAtConfig: k_steps must be >= 1");
    }
}

double batch_accuracy(const Tensor& logits, std::span<const double> labels) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        correct += static_cast<double>(predicted_class(logits, r)) == labels[r] ? 1 : 0;
    }
    return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

AsaPass asa_backward(const Model& model, const AdversaryParams& adversary, const ClassificationBatch& batch,
                     const AsaConfig& cfg, Rng& rng, TaskKind kind) {
    Tape tape;
    TapeScope scope(tape);
    AsaOutput out = asa_forward(model, adversary, batch.tokens, cfg, rng);
    AsaPass pass;
    pass.clean_logits = classifier_head(model, out.clean.cls_hidden);
    const Tensor biased_logits = classifier_head(model, out.biased.cls_hidden);
    pass.losses = finetune_objective(pass.clean_logits, biased_logits, batch.labels, &out.gates, cfg, kind);
    pass.gates = std::move(out.gates);
    require_finite(pass.losses.total, "adversarial_step");
    tape.backward(pass.losses.total);
    return pass;
}

MetricsRecord plain_step(Model& model, const ClassificationBatch& batch, const StepOptimizers& opt, Rng& rng) {
    require_model_optimizer(opt);
    zero_all(opt);
    MetricsRecord r;
    Tensor logits;
    {
        Tape tape;
        TapeScope scope(tape);
        const EncoderOutput out = encoder_forward(model, batch.tokens, training_forward(rng));
        logits = classifier_head(model, out.cls_hidden);
        const Tensor loss = task_loss(logits, batch.labels, TaskKind::classification);
        require_finite(loss, "plain_step");
        tape.backward(loss);
        r.set("l_e", loss.item());
        r.set("total", loss.item());
    }
    r.set("train_acc", batch_accuracy(logits, batch.labels));
    r.set("grad_norm", opt.model->step(opt.lr));
    r.set("lr", opt.lr);
    return r;
}

MetricsRecord adversarial_step(Model& model, AdversaryParams& adversary, const ClassificationBatch& batch,
                               const AsaConfig& cfg, const StepOptimizers& opt, Rng& rng) {
    require_model_optimizer(opt);
    if (opt.adversary == nullptr) {
        throw std::invalid_argument("adversarial_step: adversary optimizer is required");
    }
    zero_all(opt);
    const AsaPass pass = asa_backward(model, adversary, batch, cfg, rng);
    MetricsRecord r;
    r.set("l_e", pass.losses.l_e.item());
    r.set("l_asa", pass.losses.l_asa.item());
    r.set("l_c", pass.losses.l_c.item());
    r.set("total", pass.losses.total.item());
    r.set("adversary_objective", adversary_objective(pass.losses.l_asa.item(), pass.losses.l_c.item(), cfg));
    r.set("train_acc", batch_accuracy(pass.clean_logits, batch.labels));
    r.set("grad_norm", opt.model->step(opt.lr));
    r.set("adversary_grad_norm", opt.adversary->step(opt.adversary_lr));
    r.set("lr", opt.lr);
    record_gates(r, pass.gates);
    return r;
}

MetricsRecord masked_step(Model& model, const ClassificationBatch& batch, const MaskStrategy& strategy,
                          std::size_t step_index, const AsaConfig& cfg, const StepOptimizers& opt, Rng& rng) {
    require_model_optimizer(opt);
    strategy.validate();
    zero_all(opt);
    MetricsRecord r;
    Tensor clean_logits;
    GateSet gates;
    {
        Tape tape;
        TapeScope scope(tape);
        ForwardOptions fwd = training_forward(rng);
        fwd.neg = cfg.neg_const;
        const EncoderOutput clean = encoder_forward(model, batch.tokens, fwd);
        const Tensor valid = valid_pair_mask(batch.tokens);
        switch (strategy.kind) {
            case MaskKind::bernoulli:
                gates = bernoulli_gates(model.config.n_layers, valid, strategy.p, rng);
                break;
            case MaskKind::scheduled:
                gates = scheduled_gates(model.config.n_layers, valid, step_index, strategy.schedule, rng);
                break;
            case MaskKind::magnitude:
                gates = magnitude_gates(clean.scores, strategy.proportion, valid, strategy.global_magnitude);
                break;
            case MaskKind::asa:
                throw std::invalid_argument("masked_step: asa gates come from adversarial_step");
        }
        fwd.gates = &gates.gates;
        const EncoderOutput biased = encoder_forward(model, batch.tokens, fwd);
        clean_logits = classifier_head(model, clean.cls_hidden);
        const FinetuneLossReport losses =
            finetune_objective(clean_logits, classifier_head(model, biased.cls_hidden), batch.labels, nullptr, cfg);
        require_finite(losses.total, "masked_step");
        tape.backward(losses.total);
        r.set("l_e", losses.l_e.item());
        r.set("l_asa", losses.l_asa.item());
        r.set("total", losses.total.item());
    }
    r.set("train_acc", batch_accuracy(clean_logits, batch.labels));
    r.set("grad_norm", opt.model->step(opt.lr));
    r.set("lr", opt.lr);
    record_gates(r, gates);
    return r;
}

void project_to_ball(Tensor& delta, double epsilon) {
    const std::size_t bsz = delta.dim(0);
    const std::size_t per = delta.numel() / bsz;
    auto data = delta.mutable_data();
    for (std::size_t b = 0; b < bsz; ++b) {
        double norm = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            norm += data[b * per + i] * data[b * per + i];
        }
        norm = std::sqrt(norm);
        if (norm > epsilon) {
            const double s = norm > 0.0 ? epsilon / norm : 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                data[b * per + i] *= s;
            }
        }
    }
}

Tensor embedding_perturbation(const Model& model, const TokenBatch& tokens, const EmbedAtConfig& cfg, Rng& rng,
                              std::size_t* resets) {
    cfg.validate();
    const std::size_t bsz = tokens.batch, len = tokens.len, d = model.config.d_model;
    const std::size_t per = len * d;
    Tensor delta = Tensor::zeros({bsz, len, d});
    if (cfg.init == EmbedAtConfig::Init::uniform && cfg.epsilon > 0.0) {
        // Uniform in the ball: Gaussian direction, radius eps * u^(1/n).
        auto data = delta.mutable_data();
        for (std::size_t b = 0; b < bsz; ++b) {
            double norm = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                data[b * per + i] = rng.normal();
                norm += data[b * per + i] * data[b * per + i];
            }
            const double radius = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(per));
            const double s = radius / std::sqrt(norm);
            for (std::size_t i = 0; i < per; ++i) {
                data[b * per + i] *= s;
            }
        }
    }
    // The clean target is fixed for the whole inner loop.
    Tensor clean_logits;
    {
        NoGradScope no_grad;
        clean_logits = classifier_head(model, encoder_forward(model, tokens, training_forward(rng)).cls_hidden);
    }
    const NamedParams params = model.named_params();
    for (std::size_t k = 0; k < cfg.k_steps; ++k) {
        Tensor d_var = delta.detach();
        d_var.set_requires_grad(true);
        {
            Tape tape;
            TapeScope scope(tape);
            ForwardOptions fwd = training_forward(rng);
            fwd.embedding_delta = &d_var;
            const Tensor kl = kl_divergence(clean_logits, classifier_head(model, encoder_forward(model, tokens, fwd).cls_hidden));
            tape.backward(kl);
        }
        zero_grads(params);  // only delta's gradient is wanted here
        const std::vector<double> g = d_var.grad();
        auto data = delta.mutable_data();
        for (std::size_t b = 0; b < bsz; ++b) {
            double norm = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                norm += g[b * per + i] * g[b * per + i];
            }
            norm = std::sqrt(norm);
            if (norm > 0.0 && std::isfinite(norm)) {
                for (std::size_t i = 0; i < per; ++i) {
                    data[b * per + i] += cfg.step_size * g[b * per + i] / norm;
                }
            }
        }
        project_to_ball(delta, cfg.epsilon);
        bool finite = true;
        for (double v : delta.data()) {
            finite = finite && std::isfinite(v);
        }
        if (!finite) {
            std::cerr << "warning: non-finite embedding perturbation reset to zero\n";
            delta = Tensor::zeros({bsz, len, d});
            if (resets != nullptr) {
                ++*resets;
            }
        }
    }
    return delta;
}

MetricsRecord embedding_at_step(Model& model, const ClassificationBatch& batch, const EmbedAtConfig& cfg,
                                const StepOptimizers& opt, Rng& rng) {
    require_model_optimizer(opt);
    std::size_t resets = 0;
    const Tensor delta = embedding_perturbation(model, batch.tokens, cfg, rng, &resets);
    zero_all(opt);
    MetricsRecord r;
    Tensor clean_logits;
    {
        Tape tape;
        TapeScope scope(tape);
        const EncoderOutput clean = encoder_forward(model, batch.tokens, training_forward(rng));
        ForwardOptions fwd = training_forward(rng);
        fwd.embedding_delta = &delta;
        const EncoderOutput perturbed = encoder_forward(model, batch.tokens, fwd);
        clean_logits = classifier_head(model, clean.cls_hidden);
        const Tensor l_e = task_loss(clean_logits, batch.labels, TaskKind::classification);
        const Tensor kl = kl_divergence(clean_logits, classifier_head(model, perturbed.cls_hidden));
        const Tensor total = add(l_e, scale(kl, cfg.alpha));
        require_finite(total, "embedding_at_step");
        tape.backward(total);
        r.set("l_e", l_e.item());
        r.set("l_adv", kl.item());
        r.set("total", total.item());
    }
    double max_norm = 0.0;
    const std::size_t per = delta.numel() / batch.tokens.batch;
    for (std::size_t b = 0; b < batch.tokens.batch; ++b) {
        double n = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            n += delta[b * per + i] * delta[b * per + i];
        }
        max_norm = std::max(max_norm, std::sqrt(n));
    }
    r.set("delta_norm", max_norm);
    r.set("delta_resets", static_cast<double>(resets));
    r.set("train_acc", batch_accuracy(clean_logits, batch.labels));
    r.set("grad_norm", opt.model->step(opt.lr));
    r.set("lr", opt.lr);
    return r;
}

MetricsRecord pretrain_step(Model& model, AdversaryParams* adversary, const MlmBatch& batch, const AsaConfig& cfg,
                            const StepOptimizers& opt, Rng& rng) {
    require_model_optimizer(opt);
    if (adversary != nullptr && opt.adversary == nullptr) {
        throw std::invalid_argument("pretrain_step: adversary optimizer is required");
    }
    zero_all(opt);
    MetricsRecord r;
    GateSet gates;
    {
        Tape tape;
        TapeScope scope(tape);
        PretrainLossReport losses;
        if (adversary != nullptr) {
            AsaOutput out = asa_forward(model, *adversary, batch.tokens, cfg, rng);
            const PretrainLogits clean{mlm_head(model, out.clean.final_hidden),
                                       sentence_order_head(model, out.clean.cls_hidden)};
            const PretrainLogits biased{mlm_head(model, out.biased.final_hidden),
                                        sentence_order_head(model, out.biased.cls_hidden)};
            gates = std::move(out.gates);
            losses = pretrain_objective(clean, &biased, batch.targets, batch.order_labels, &gates, cfg);
        } else {
            const EncoderOutput out = encoder_forward(model, batch.tokens, training_forward(rng));
            const PretrainLogits clean{mlm_head(model, out.final_hidden), sentence_order_head(model, out.cls_hidden)};
            losses = pretrain_objective(clean, nullptr, batch.targets, batch.order_labels, nullptr, cfg);
        }
        if (losses.token_terms_skipped) {
            std::cerr << "warning: batch has no masked positions; token-level terms skipped\n";
        }
        require_finite(losses.objective, "pretrain_step");
        tape.backward(losses.objective);
        r.set("l_mlm", losses.l_mlm.item());
        r.set("l_asa_token", losses.l_asa_token.item());
        r.set("l_asa_sentence", losses.l_asa_sentence.item());
        r.set("l_c", losses.l_c.item());
        r.set("l_sop", losses.l_sop.item());
        r.set("total", losses.total.item());
    }
    r.set("grad_norm", opt.model->step(opt.lr));
    if (adversary != nullptr) {
        r.set("adversary_grad_norm", opt.adversary->step(opt.adversary_lr));
        record_gates(r, gates);
    }
    r.set("lr", opt.lr);
    return r;
}

EvalResult evaluate(const Model& model, std::span<const Example> examples, std::size_t seq_len,
                    std::size_t batch_size) {
    NoGradScope no_grad;
    EvalResult res;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t end = std::min(examples.size(), start + batch_size);
        std::vector<std::size_t> idx(end - start);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            idx[i] = start + i;
        }
        const ClassificationBatch b = make_classification_batch(examples, idx, seq_len);
        const Tensor logits = classifier_head(model, encoder_forward(model, b.tokens).cls_hidden);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const int pred = static_cast<int>(predicted_class(logits, r));
            res.predictions.push_back(pred);
            res.labels.push_back(examples[idx[r]].label);
            correct += pred == examples[idx[r]].label ? 1 : 0;
        }
    }
    res.accuracy = examples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(examples.size());
    return res;
}

}  // namespace asa
