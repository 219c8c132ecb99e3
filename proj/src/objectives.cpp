#include "asa/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "asa/ops.hpp"

namespace asa {

namespace {

Tensor as_rows(const Tensor& logits) {
    if (logits.rank() < 1) {
        throw ShapeError("logits must have a class axis, got " + shape_str(logits.shape()));
    }
    const std::size_t c = logits.dim(-1);
    return reshape(logits, {logits.numel() / c, c});
}

}  // namespace

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits,
                     const std::optional<std::vector<std::size_t>>& positions) {
    if (p_logits.dim(-1) != q_logits.dim(-1) || p_logits.numel() != q_logits.numel()) {
        throw ShapeError("kl_divergence", p_logits.shape(), q_logits.shape());
    }
    Tensor p_rows = as_rows(p_logits.detach());
    Tensor q_rows = as_rows(q_logits);
    if (positions) {
        if (positions->empty()) {
            throw std::invalid_argument("kl_divergence: empty position set");
        }
        p_rows = take_rows(p_rows, *positions);
        q_rows = take_rows(q_rows, *positions);
    }
    const Tensor log_p = log_softmax(p_rows);
    const Tensor p = softmax(p_rows);
    const Tensor per_row = sum_last(mul(p, sub(log_p, log_softmax(q_rows))));
    return mean(per_row);
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const Tensor rows = as_rows(logits);
    const std::size_t c = rows.dim(1);
    if (labels.size() != rows.dim(0)) {
        throw ShapeError("cross_entropy(labels)", Shape{rows.dim(0)}, Shape{labels.size()});
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                                    std::to_string(c) + ")");
        }
    }
    return scale(mean(gather_last(log_softmax(rows), std::vector<int>(labels.begin(), labels.end()))), -1.0);
}

Tensor task_loss(const Tensor& logits, std::span<const double> labels, TaskKind kind) {
    if (kind == TaskKind::classification) {
        std::vector<int> ids(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != std::floor(labels[i])) {
                throw std::out_of_range("task_loss: classification label " + std::to_string(labels[i]) +
                                        " is not an integer");
            }
            ids[i] = static_cast<int>(labels[i]);
        }
        return cross_entropy(logits, ids);
    }
    if (logits.numel() != labels.size()) {
        throw ShapeError("task_loss(regression)", Shape{labels.size()}, logits.shape());
    }
    const Tensor pred = reshape(logits, {labels.size()});
    const Tensor target(Shape{labels.size()}, std::vector<double>(labels.begin(), labels.end()));
    const Tensor diff = sub(pred, target);
    return mean(mul(diff, diff));
}

FinetuneLossReport finetune_objective(const Tensor& clean_logits, const Tensor& biased_logits,
                                      std::span<const double> labels, const GateSet* gates, const AsaConfig& cfg,
                                      TaskKind kind) {
    FinetuneLossReport r;
    r.l_e = task_loss(clean_logits, labels, kind);
    if (kind == TaskKind::classification) {
        r.l_asa = kl_divergence(clean_logits, biased_logits);
    } else {
        // Squared difference of predictions stands in for KL on regression heads.
        const Tensor diff = sub(biased_logits, clean_logits.detach());
        r.l_asa = mean(mul(diff, diff));
    }
    r.l_c = gates != nullptr && !gates->logits.empty() ? masked_fraction_penalty(*gates) : Tensor::scalar(0.0);
    r.total = add(add(r.l_e, scale(r.l_asa, cfg.alpha)), scale(r.l_c, cfg.tau));
    return r;
}

PretrainLossReport pretrain_objective(const PretrainLogits& clean, const PretrainLogits* biased,
                                      std::span<const int> mlm_targets, std::span<const int> order_labels,
                                      const GateSet* gates, const AsaConfig& cfg) {
    PretrainLossReport r;
    const std::size_t vocab = clean.mlm.dim(-1);
    const std::size_t positions_total = clean.mlm.numel() / vocab;
    if (mlm_targets.size() != positions_total) {
        throw ShapeError("pretrain_objective(mlm_targets)", Shape{positions_total}, Shape{mlm_targets.size()});
    }
    std::vector<std::size_t> selected;
    std::vector<int> targets;
    for (std::size_t i = 0; i < mlm_targets.size(); ++i) {
        if (mlm_targets[i] >= 0) {
            selected.push_back(i);
            targets.push_back(mlm_targets[i]);
        }
    }
    const Tensor clean_rows = reshape(clean.mlm, {positions_total, vocab});
    if (selected.empty()) {
        r.token_terms_skipped = true;
        r.l_mlm = Tensor::scalar(0.0);
        r.l_asa_token = Tensor::scalar(0.0);
    } else {
        r.l_mlm = cross_entropy(take_rows(clean_rows, selected), targets);
        r.l_asa_token = biased != nullptr ? kl_divergence(clean.mlm, biased->mlm, selected) : Tensor::scalar(0.0);
    }
    r.l_asa_sentence = biased != nullptr ? kl_divergence(clean.sentence, biased->sentence) : Tensor::scalar(0.0);
    r.l_sop = cross_entropy(clean.sentence, order_labels);
    r.l_c = gates != nullptr && !gates->logits.empty() ? masked_fraction_penalty(*gates) : Tensor::scalar(0.0);
    r.total = add(add(add(r.l_mlm, r.l_asa_token), r.l_asa_sentence), scale(r.l_c, cfg.tau));
    r.objective = add(r.total, scale(r.l_sop, kSentenceOrderAuxWeight));
    return r;
}

Tensor adversary_objective(const Tensor& l_asa, const Tensor& l_c, const AsaConfig& cfg) {
    return sub(scale(l_asa, cfg.alpha), scale(l_c, cfg.tau));
}

double adversary_objective(double l_asa, double l_c, const AsaConfig& cfg) {
    return cfg.alpha * l_asa - cfg.tau * l_c;
}

}  // namespace asa
