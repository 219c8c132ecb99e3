#pragma once

#include <optional>
#include <span>
#include <vector>

#include "asa/adversary.hpp"
#include "asa/tensor.hpp"

namespace asa {

enum class TaskKind { classification, regression };

/// Mean over the selected rows of KL(softmax(p) || softmax(q)). Logits are
/// [..., C] and flattened to rows; `p_logits` never receives a gradient.
/// Throws on an empty position set.
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits,
                     const std::optional<std::vector<std::size_t>>& positions = std::nullopt);

/// Mean cross-entropy of logits [N, C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Cross-entropy for classification (labels are class ids) or mean squared
/// error for regression (logits [N, 1] or [N]).
Tensor task_loss(const Tensor& logits, std::span<const double> labels, TaskKind kind);

struct FinetuneLossReport {
    Tensor l_e;
    Tensor l_asa;
    Tensor l_c;
    Tensor total;  // l_e + alpha * l_asa + tau * l_c
};

/// `gates` may be null for baselines whose gates carry no penalty (l_c = 0).
FinetuneLossReport finetune_objective(const Tensor& clean_logits, const Tensor& biased_logits,
                                      std::span<const double> labels, const GateSet* gates, const AsaConfig& cfg,
                                      TaskKind kind = TaskKind::classification);

struct PretrainLogits {
    Tensor mlm;       // [B, L, V]
    Tensor sentence;  // [B, 2]
};

inline constexpr double kSentenceOrderAuxWeight = 0.1;

struct PretrainLossReport {
    Tensor l_mlm;
    Tensor l_asa_token;
    Tensor l_asa_sentence;
    Tensor l_c;
    Tensor l_sop;       // auxiliary sentence-order cross-entropy on the clean branch
    Tensor total;       // l_mlm + l_asa_token + l_asa_sentence + tau * l_c
    Tensor objective;   // total + kSentenceOrderAuxWeight * l_sop, the quantity differentiated
    bool token_terms_skipped = false;  // no masked positions in the batch
};

/// `mlm_targets` holds the original id at selected positions and -1 elsewhere.
/// A null `biased` or `gates` drops the ASA terms (plain MLM training).
PretrainLossReport pretrain_objective(const PretrainLogits& clean, const PretrainLogits* biased,
                                      std::span<const int> mlm_targets, std::span<const int> order_labels,
                                      const GateSet* gates, const AsaConfig& cfg);

/// alpha * l_asa - tau * l_c: the quantity the adversary ascends.
Tensor adversary_objective(const Tensor& l_asa, const Tensor& l_c, const AsaConfig& cfg);
double adversary_objective(double l_asa, double l_c, const AsaConfig& cfg);

}  // namespace asa
