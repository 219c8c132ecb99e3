#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "asa/adversary.hpp"
#include "asa/baselines.hpp"
#include "asa/data.hpp"
#include "asa/metrics.hpp"
#include "asa/objectives.hpp"
#include "asa/optim.hpp"
#include "asa/transformer.hpp"

namespace asa {

/// Raised when a step's loss is NaN or infinite; no parameter is updated.
class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EmbedAtConfig {
    enum class Init { zero, uniform };

    double epsilon = 1.0;   // L2 radius of the per-example perturbation ball
    double step_size = 0.5;
    std::size_t k_steps = 1;
    Init init = Init::uniform;
    double alpha = 1.0;     // weight of the outer divergence term

    void validate() const;
};

/// The update applied by each step, with an optional second optimizer for the adversary.
struct StepOptimizers {
    AdamW* model = nullptr;
    AdamW* adversary = nullptr;
    double lr = 0.0;
    double adversary_lr = 0.0;
};

// --- Gradient passes (no parameter update) --------------------------------

struct AsaPass {
    FinetuneLossReport losses;
    GateSet gates;
    Tensor clean_logits;
};

/// One forward and one backward of l_e + alpha * l_asa + tau * l_c with the
/// gates routed into the trunk through gradient reversal. Afterwards the
/// trunk holds the gradient of l_e + alpha * l_asa and the adversary holds
/// the negated gradient of alpha * l_asa - tau * l_c.
AsaPass asa_backward(const Model& model, const AdversaryParams& adversary, const ClassificationBatch& batch,
                     const AsaConfig& cfg, Rng& rng, TaskKind kind = TaskKind::classification);

// --- Fine-tuning steps ----------------------------------------------------

MetricsRecord plain_step(Model& model, const ClassificationBatch& batch, const StepOptimizers& opt, Rng& rng);

MetricsRecord adversarial_step(Model& model, AdversaryParams& adversary, const ClassificationBatch& batch,
                               const AsaConfig& cfg, const StepOptimizers& opt, Rng& rng);

/// Trains on l_e + alpha * l_asa with gates from a fixed strategy (no penalty).
MetricsRecord masked_step(Model& model, const ClassificationBatch& batch, const MaskStrategy& strategy,
                          std::size_t step_index, const AsaConfig& cfg, const StepOptimizers& opt, Rng& rng);

/// K-step normalized-gradient ascent of KL(clean || perturbed) on an
/// embedding perturbation, then descent on task loss + alpha * KL.
MetricsRecord embedding_at_step(Model& model, const ClassificationBatch& batch, const EmbedAtConfig& cfg,
                                const StepOptimizers& opt, Rng& rng);

/// Returns the final perturbation of the inner loop with the model frozen;
/// exposed for tests and the ascent comparison.
Tensor embedding_perturbation(const Model& model, const TokenBatch& tokens, const EmbedAtConfig& cfg, Rng& rng,
                              std::size_t* resets = nullptr);

/// Projects each example's [L, d] slice onto the L2 ball of radius epsilon.
void project_to_ball(Tensor& delta, double epsilon);

// --- Pre-training -----------------------------------------------------------

/// MLM + sentence-order step; a null adversary gives plain pre-training.
MetricsRecord pretrain_step(Model& model, AdversaryParams* adversary, const MlmBatch& batch, const AsaConfig& cfg,
                            const StepOptimizers& opt, Rng& rng);

// --- Evaluation -------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<int> labels;
};

EvalResult evaluate(const Model& model, std::span<const Example> examples, std::size_t seq_len,
                    std::size_t batch_size = 64);

double batch_accuracy(const Tensor& logits, std::span<const double> labels);

}  // namespace asa
