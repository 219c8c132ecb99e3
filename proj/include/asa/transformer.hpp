#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "asa/params.hpp"
#include "asa/rng.hpp"
#include "asa/tensor.hpp"

namespace asa {

/// Large negative additive bias standing in for -inf in attention masks.
inline constexpr double kDefaultNeg = -1e4;

struct ModelConfig {
    std::size_t vocab_size = 200;
    std::size_t max_seq_len = 32;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 4;
    std::size_t d_ff = 256;
    double dropout_p = 0.0;
    std::size_t n_classes = 2;

    std::size_t d_head() const { return d_model / n_heads; }
    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Token ids plus a validity mask (1 = real token, 0 = padding), row-major [batch, len].
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<int> ids;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return batch * len; }
    bool is_valid(std::size_t b, std::size_t t) const { return valid[b * len + t] != 0; }
};

struct LayerParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
    Tensor ln2_gamma, ln2_beta;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

struct Model {
    ModelConfig config;

    Tensor token_embedding;     // [vocab, d]
    Tensor position_embedding;  // [max_seq_len, d]
    std::vector<LayerParams> layers;
    Tensor final_ln_gamma, final_ln_beta;

    Tensor cls_w, cls_b;            // classifier [d, n_classes]
    Tensor mlm_dense_w, mlm_dense_b, mlm_ln_gamma, mlm_ln_beta, mlm_out_w, mlm_out_b;
    Tensor sop_w, sop_b;            // sentence order [d, 2]

    static Model init(const ModelConfig& config, Rng& rng);

    /// Every parameter under a stable name; checkpoints and optimizers key on these.
    NamedParams named_params() const;
};

struct EncoderOutput {
    Tensor final_hidden;                 // [B, L, d]
    std::vector<Tensor> layer_inputs;    // h^i per layer, [B, L, d]
    std::vector<Tensor> scores;          // pre-bias scaled dot products, [B, H, L, L]
    std::vector<Tensor> topologies;      // post-softmax attention, [B, H, L, L]
    Tensor cls_hidden;                   // [B, d]
};

struct ForwardOptions {
    /// One [B, L, L] gate per layer with entries in {0, 1}; absent means no gate bias.
    const std::vector<Tensor>* gates = nullptr;
    /// Additive perturbation of the summed input embeddings, [B, L, d].
    const Tensor* embedding_delta = nullptr;
    /// Bias on gated-out pairs. Padding keys always get kDefaultNeg.
    double neg = kDefaultNeg;
    /// Needed only when dropout is active.
    Rng* rng = nullptr;
    bool training = false;
};

/// Q K^T / sqrt(d_head) for Q, K shaped [B, H, L, d_head].
Tensor attention_scores(const Tensor& q, const Tensor& k);

/// [B, L, L] bias with `neg` on every key column that is padding.
Tensor padding_bias(const TokenBatch& batch, double neg);

/// scores + mu_pad + neg * (1 - gate), the gate broadcast across heads.
/// Padding columns stay masked whatever the gate holds.
Tensor apply_structure_bias(const Tensor& scores, const std::optional<Tensor>& gate, const Tensor& pad_bias,
                            double neg);

EncoderOutput encoder_forward(const Model& model, const TokenBatch& batch, const ForwardOptions& options = {});

Tensor classifier_head(const Model& model, const Tensor& cls_hidden);
Tensor mlm_head(const Model& model, const Tensor& final_hidden);
Tensor sentence_order_head(const Model& model, const Tensor& cls_hidden);

}  // namespace asa
