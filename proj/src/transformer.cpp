#include "asa/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "asa/ops.hpp"

namespace asa {

namespace {

constexpr double kInitStd = 0.02;

void require_field(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument("ModelConfig: " + msg);
    }
}

// [B, L, H*dh] -> [B, H, L, dh]
Tensor split_heads(const Tensor& x, std::size_t heads) {
    const std::size_t b = x.dim(0);
    const std::size_t l = x.dim(1);
    const std::size_t dh = x.dim(2) / heads;
    return permute(reshape(x, {b, l, heads, dh}), {0, 2, 1, 3});
}

// [B, H, L, dh] -> [B, L, H*dh]
Tensor merge_heads(const Tensor& x) {
    const std::size_t b = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t l = x.dim(2);
    const std::size_t dh = x.dim(3);
    return reshape(permute(x, {0, 2, 1, 3}), {b, l, h * dh});
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

}  // namespace

void ModelConfig::validate() const {
    require_field(vocab_size > 0, "vocab_size must be positive");
    require_field(max_seq_len >= 2, "max_seq_len must be >= 2");
    require_field(d_model > 0 && n_heads > 0, "d_model and n_heads must be positive");
    require_field(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                              std::to_string(n_heads) + ")");
    require_field(n_layers > 0, "n_layers must be positive");
    require_field(d_ff > 0, "d_ff must be positive");
    require_field(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must be in [0, 1)");
    require_field(n_classes >= 1, "n_classes must be positive");
}

Model Model::init(const ModelConfig& config, Rng& rng) {
    config.validate();
    const std::size_t d = config.d_model;
    Model m;
    m.config = config;
    m.token_embedding = normal_param(rng, {config.vocab_size, d}, kInitStd);
    m.position_embedding = normal_param(rng, {config.max_seq_len, d}, kInitStd);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        LayerParams p;
        p.ln1_gamma = ones_param({d});
        p.ln1_beta = zeros_param({d});
        p.w_q = normal_param(rng, {d, d}, kInitStd);
        p.b_q = zeros_param({d});
        p.w_k = normal_param(rng, {d, d}, kInitStd);
        p.b_k = zeros_param({d});
        p.w_v = normal_param(rng, {d, d}, kInitStd);
        p.b_v = zeros_param({d});
        p.w_o = normal_param(rng, {d, d}, kInitStd);
        p.b_o = zeros_param({d});
        p.ln2_gamma = ones_param({d});
        p.ln2_beta = zeros_param({d});
        p.w_ff1 = normal_param(rng, {d, config.d_ff}, kInitStd);
        p.b_ff1 = zeros_param({config.d_ff});
        p.w_ff2 = normal_param(rng, {config.d_ff, d}, kInitStd);
        p.b_ff2 = zeros_param({d});
        m.layers.push_back(std::move(p));
    }
    m.final_ln_gamma = ones_param({d});
    m.final_ln_beta = zeros_param({d});
    m.cls_w = normal_param(rng, {d, config.n_classes}, kInitStd);
    m.cls_b = zeros_param({config.n_classes});
    m.mlm_dense_w = normal_param(rng, {d, d}, kInitStd);
    m.mlm_dense_b = zeros_param({d});
    m.mlm_ln_gamma = ones_param({d});
    m.mlm_ln_beta = zeros_param({d});
    m.mlm_out_w = normal_param(rng, {d, config.vocab_size}, kInitStd);
    m.mlm_out_b = zeros_param({config.vocab_size});
    m.sop_w = normal_param(rng, {d, 2}, kInitStd);
    m.sop_b = zeros_param({2});
    return m;
}

NamedParams Model::named_params() const {
    NamedParams out;
    out.emplace_back("embeddings.token", token_embedding);
    out.emplace_back("embeddings.position", position_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        const LayerParams& l = layers[i];
        out.emplace_back(p + "ln1.gamma", l.ln1_gamma);
        out.emplace_back(p + "ln1.beta", l.ln1_beta);
        out.emplace_back(p + "attn.w_q", l.w_q);
        out.emplace_back(p + "attn.b_q", l.b_q);
        out.emplace_back(p + "attn.w_k", l.w_k);
        out.emplace_back(p + "attn.b_k", l.b_k);
        out.emplace_back(p + "attn.w_v", l.w_v);
        out.emplace_back(p + "attn.b_v", l.b_v);
        out.emplace_back(p + "attn.w_o", l.w_o);
        out.emplace_back(p + "attn.b_o", l.b_o);
        out.emplace_back(p + "ln2.gamma", l.ln2_gamma);
        out.emplace_back(p + "ln2.beta", l.ln2_beta);
        out.emplace_back(p + "ffn.w1", l.w_ff1);
        out.emplace_back(p + "ffn.b1", l.b_ff1);
        out.emplace_back(p + "ffn.w2", l.w_ff2);
        out.emplace_back(p + "ffn.b2", l.b_ff2);
    }
    out.emplace_back("final_ln.gamma", final_ln_gamma);
    out.emplace_back("final_ln.beta", final_ln_beta);
    out.emplace_back("heads.classifier.w", cls_w);
    out.emplace_back("heads.classifier.b", cls_b);
    out.emplace_back("heads.mlm.dense.w", mlm_dense_w);
    out.emplace_back("heads.mlm.dense.b", mlm_dense_b);
    out.emplace_back("heads.mlm.ln.gamma", mlm_ln_gamma);
    out.emplace_back("heads.mlm.ln.beta", mlm_ln_beta);
    out.emplace_back("heads.mlm.out.w", mlm_out_w);
    out.emplace_back("heads.mlm.out.b", mlm_out_b);
    out.emplace_back("heads.sentence_order.w", sop_w);
    out.emplace_back("heads.sentence_order.b", sop_b);
    return out;
}

Tensor attention_scores(const Tensor& q, const Tensor& k) {
    if (q.rank() != 4) {
        throw ShapeError("attention_scores: Q must be [B, H, L, d_head], got " + shape_str(q.shape()));
    }
    if (k.shape() != q.shape()) {
        throw ShapeError("attention_scores", q.shape(), k.shape());
    }
    return scale(matmul(q, transpose_last_two(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(3))));
}

Tensor padding_bias(const TokenBatch& batch, double neg) {
    const std::size_t l = batch.len;
    std::vector<double> bias(batch.batch * l * l, 0.0);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < l; ++j) {
            if (!batch.is_valid(b, j)) {
                for (std::size_t i = 0; i < l; ++i) {
                    bias[(b * l + i) * l + j] = neg;
                }
            }
        }
    }
    return Tensor({batch.batch, l, l}, std::move(bias));
}

Tensor apply_structure_bias(const Tensor& scores, const std::optional<Tensor>& gate, const Tensor& pad_bias,
                            double neg) {
    if (!gate) {
        return add_head_bias(scores, pad_bias);
    }
    if (gate->shape() != pad_bias.shape()) {
        throw ShapeError("apply_structure_bias(gate)", pad_bias.shape(), gate->shape());
    }
    for (double g : gate->data()) {
        if (std::abs(g) > 1e-9 && std::abs(g - 1.0) > 1e-9) {
            throw std::invalid_argument("apply_structure_bias: gate value " + std::to_string(g) +
                                        " is not in {0, 1}");
        }
    }
    // pad + neg * (1 - gate), one node; pad_bias is a constant.
    std::vector<double> bias(pad_bias.numel());
    const auto pd = pad_bias.data();
    const auto gd = gate->data();
    for (std::size_t i = 0; i < bias.size(); ++i) {
        bias[i] = pd[i] + neg * (1.0 - gd[i]);
    }
    auto gi = gate->impl();
    const Tensor combined = make_result("gate_bias", pad_bias.shape(), std::move(bias), {&*gate}, [gi, neg](TensorImpl& o) {
        if (!gi->requires_grad) {
            return;
        }
        auto g = gi->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] -= neg * o.grad[i];
        }
    });
    return add_head_bias(scores, combined);
}

EncoderOutput encoder_forward(const Model& model, const TokenBatch& batch, const ForwardOptions& options) {
    const ModelConfig& cfg = model.config;
    const std::size_t bsz = batch.batch;
    const std::size_t len = batch.len;
    if (len > cfg.max_seq_len) {
        throw std::invalid_argument("encoder_forward: sequence length " + std::to_string(len) +
                                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (batch.ids.size() != bsz * len || batch.valid.size() != bsz * len) {
        throw ShapeError("encoder_forward(batch)", Shape{bsz, len}, Shape{batch.ids.size()});
    }
    if (options.gates != nullptr && options.gates->size() != cfg.n_layers) {
        throw std::invalid_argument("encoder_forward: expected " + std::to_string(cfg.n_layers) +
                                    " gate slices, got " + std::to_string(options.gates->size()));
    }
    const bool use_dropout = options.training && cfg.dropout_p > 0.0;
    if (use_dropout && options.rng == nullptr) {
        throw std::invalid_argument("encoder_forward: dropout requires an rng");
    }

    std::vector<int> positions(bsz * len);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        positions[i] = static_cast<int>(i % len);
    }
    Tensor x = add(embedding(model.token_embedding, batch.ids, {bsz, len}),
                   embedding(model.position_embedding, positions, {bsz, len}));
    if (options.embedding_delta != nullptr) {
        x = add(x, *options.embedding_delta);
    }
    const Tensor pad = padding_bias(batch, kDefaultNeg);

    EncoderOutput out;
    const std::size_t heads = cfg.n_heads;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const LayerParams& p = model.layers[i];
        out.layer_inputs.push_back(x);

        const Tensor a = layer_norm(x, p.ln1_gamma, p.ln1_beta);
        const Tensor q = split_heads(affine(a, p.w_q, p.b_q), heads);
        const Tensor k = split_heads(affine(a, p.w_k, p.b_k), heads);
        const Tensor v = split_heads(affine(a, p.w_v, p.b_v), heads);
        const Tensor scores = attention_scores(q, k);
        std::optional<Tensor> gate;
        if (options.gates != nullptr) {
            gate = (*options.gates)[i];
        }
        const Tensor topo = softmax(apply_structure_bias(scores, gate, pad, options.neg));
        out.scores.push_back(scores);
        out.topologies.push_back(topo);

        Tensor attn = affine(merge_heads(matmul(topo, v)), p.w_o, p.b_o);
        if (use_dropout) {
            attn = dropout(attn, cfg.dropout_p, *options.rng);
        }
        x = add(x, attn);

        const Tensor f = layer_norm(x, p.ln2_gamma, p.ln2_beta);
        Tensor ff = affine(gelu(affine(f, p.w_ff1, p.b_ff1)), p.w_ff2, p.b_ff2);
        if (use_dropout) {
            ff = dropout(ff, cfg.dropout_p, *options.rng);
        }
        x = add(x, ff);
    }
    out.final_hidden = layer_norm(x, model.final_ln_gamma, model.final_ln_beta);
    out.cls_hidden = reshape(slice(out.final_hidden, 1, 0, 1), {bsz, cfg.d_model});
    return out;
}

Tensor classifier_head(const Model& model, const Tensor& cls_hidden) {
    return affine(cls_hidden, model.cls_w, model.cls_b);
}

Tensor mlm_head(const Model& model, const Tensor& final_hidden) {
    const Tensor t = layer_norm(gelu(affine(final_hidden, model.mlm_dense_w, model.mlm_dense_b)), model.mlm_ln_gamma,
                                model.mlm_ln_beta);
    return affine(t, model.mlm_out_w, model.mlm_out_b);
}

Tensor sentence_order_head(const Model& model, const Tensor& cls_hidden) {
    return affine(cls_hidden, model.sop_w, model.sop_b);
}

}  // namespace asa
