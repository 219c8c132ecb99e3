#include <doctest.h>

#include <cmath>
#include <vector>

#include "asa/ops.hpp"
#include "asa/transformer.hpp"
#include "finite_diff.hpp"
#include "random_tensors.hpp"

using namespace asa;
using asa::testing::central_differences;
using asa::testing::probe;
using asa::testing::random_tensor;
using asa::testing::relative_error;
using asa::testing::values;

namespace {

using Mat = std::vector<std::vector<double>>;

// Plain-loop reference encoder used as an independent oracle.
Mat ref_affine(const Mat& x, const Tensor& w, const Tensor& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    Mat y(x.size(), std::vector<double>(out, 0.0));
    for (std::size_t r = 0; r < x.size(); ++r) {
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < in; ++i) {
                s += x[r][i] * w[i * out + o];
            }
            y[r][o] = s;
        }
    }
    return y;
}

Mat ref_layer_norm(const Mat& x, const Tensor& g, const Tensor& b) {
    Mat y = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double n = static_cast<double>(x[r].size());
        double mu = 0.0, var = 0.0;
        for (double v : x[r]) mu += v / n;
        for (double v : x[r]) var += (v - mu) * (v - mu) / n;
        for (std::size_t i = 0; i < x[r].size(); ++i) {
            y[r][i] = (x[r][i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
        }
    }
    return y;
}

double ref_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// One example, no padding, optional per-layer gate (len x len, row-major).
Mat ref_encoder(const Model& m, const std::vector<int>& ids, const std::vector<std::vector<double>>* gates) {
    const auto& cfg = m.config;
    const std::size_t len = ids.size(), d = cfg.d_model, h = cfg.n_heads, dh = cfg.d_head();
    Mat x(len, std::vector<double>(d));
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            x[t][i] = m.token_embedding[ids[t] * d + i] + m.position_embedding[t * d + i];
        }
    }
    for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
        const LayerParams& p = m.layers[layer];
        const Mat a = ref_layer_norm(x, p.ln1_gamma, p.ln1_beta);
        const Mat q = ref_affine(a, p.w_q, p.b_q), k = ref_affine(a, p.w_k, p.b_k), v = ref_affine(a, p.w_v, p.b_v);
        Mat ctx(len, std::vector<double>(d, 0.0));
        for (std::size_t hd = 0; hd < h; ++hd) {
            for (std::size_t i = 0; i < len; ++i) {
                std::vector<double> row(len);
                double mx = -1e300;
                for (std::size_t j = 0; j < len; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += q[i][hd * dh + c] * k[j][hd * dh + c];
                    s /= std::sqrt(static_cast<double>(dh));
                    if (gates != nullptr && (*gates)[layer][i * len + j] == 0.0) s += kDefaultNeg;
                    row[j] = s;
                    mx = std::max(mx, s);
                }
                double z = 0.0;
                for (double& s : row) z += (s = std::exp(s - mx));
                for (std::size_t j = 0; j < len; ++j) {
                    for (std::size_t c = 0; c < dh; ++c) ctx[i][hd * dh + c] += row[j] / z * v[j][hd * dh + c];
                }
            }
        }
        const Mat o = ref_affine(ctx, p.w_o, p.b_o);
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[t][i];
        Mat f = ref_affine(ref_layer_norm(x, p.ln2_gamma, p.ln2_beta), p.w_ff1, p.b_ff1);
        for (auto& r : f)
            for (double& v2 : r) v2 = ref_gelu(v2);
        const Mat f2 = ref_affine(f, p.w_ff2, p.b_ff2);
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t i = 0; i < d; ++i) x[t][i] += f2[t][i];
    }
    return ref_layer_norm(x, m.final_ln_gamma, m.final_ln_beta);
}

ModelConfig small_config() {
    ModelConfig c;
    c.vocab_size = 20;
    c.max_seq_len = 8;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 16;
    return c;
}

// Random weights at a larger scale than init so attention is far from uniform.
Model random_model(const ModelConfig& cfg, std::uint64_t seed, double sd = 0.5) {
    Rng rng(seed);
    Model m = Model::init(cfg, rng);
    for (auto& [name, t] : m.named_params()) {
        for (double& v : t.mutable_data()) {
            v = rng.normal(0.0, sd);
        }
    }
    return m;
}

TokenBatch random_batch(std::size_t b, std::size_t len, std::size_t vocab, Rng& rng, bool pad = false) {
    TokenBatch tb;
    tb.batch = b;
    tb.len = len;
    for (std::size_t i = 0; i < b * len; ++i) {
        tb.ids.push_back(static_cast<int>(rng.below(vocab)));
        const std::size_t t = i % len;
        tb.valid.push_back(pad && (i / len) % 2 == 1 && t >= len - 2 ? 0 : 1);
    }
    return tb;
}

}  // namespace

TEST_CASE("model config validation names the field") {
    ModelConfig c = small_config();
    c.n_heads = 3;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_heads"), std::invalid_argument);
    c = small_config();
    c.max_seq_len = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("attention scores: orthonormal rows, bilinearity, loop oracle") {
    Tensor q({1, 1, 4, 4}, std::vector<double>(16, 0.0));
    for (std::size_t i = 0; i < 4; ++i) q.mutable_data()[i * 4 + i] = 1.0;
    const Tensor s = attention_scores(q, q);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(s[i * 4 + j] == (i == j ? 0.5 : 0.0));

    Rng rng(11);
    const Tensor a = random_tensor(rng, {2, 3, 5, 4}, 1.0, false);
    const Tensor b = random_tensor(rng, {2, 3, 5, 4}, 1.0, false);
    const Tensor ab = attention_scores(a, b);
    const Tensor ab3 = attention_scores(scale(a, 3.0), b);
    for (std::size_t i = 0; i < ab.numel(); ++i) CHECK(ab3[i] == doctest::Approx(3.0 * ab[i]).epsilon(1e-12));

    double worst = 0.0;
    for (std::size_t bh = 0; bh < 6; ++bh)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < 4; ++c) dot += a[(bh * 5 + i) * 4 + c] * b[(bh * 5 + j) * 4 + c];
                worst = std::max(worst, std::abs(dot / 2.0 - ab[(bh * 5 + i) * 5 + j]));
            }
    CHECK(worst < 1e-10);

    CHECK_THROWS_AS(attention_scores(a, random_tensor(rng, {2, 3, 5, 3}, 1.0, false)), ShapeError);
}

TEST_CASE("structure bias: all-keep, single survivor, fully masked row, bad gate") {
    Rng rng(5);
    TokenBatch tb = random_batch(1, 4, 10, rng);
    const Tensor pad = padding_bias(tb, kDefaultNeg);
    const Tensor scores = random_tensor(rng, {1, 2, 4, 4}, 1.0, false);
    const Tensor plain = apply_structure_bias(scores, std::nullopt, pad, kDefaultNeg);
    const Tensor keep = apply_structure_bias(scores, Tensor::full({1, 4, 4}, 1.0), pad, kDefaultNeg);
    CHECK(values(plain) == values(keep));

    Tensor gate = Tensor::full({1, 4, 4}, 1.0);
    for (std::size_t j = 0; j < 4; ++j) gate.mutable_data()[0 * 4 + j] = j == 2 ? 1.0 : 0.0;  // row 0: survivor 2
    for (std::size_t j = 0; j < 4; ++j) gate.mutable_data()[1 * 4 + j] = 0.0;                // row 1: fully masked
    const Tensor topo = softmax(apply_structure_bias(scores, gate, pad, kDefaultNeg));
    const Tensor clean = softmax(plain);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(topo[(h * 4 + 0) * 4 + j] == doctest::Approx(j == 2 ? 1.0 : 0.0).epsilon(1e-6));
            CHECK(std::abs(topo[(h * 4 + 1) * 4 + j] - clean[(h * 4 + 1) * 4 + j]) < 1e-6);
        }
    }
    gate.mutable_data()[5] = 0.5;
    CHECK_THROWS_AS(apply_structure_bias(scores, gate, pad, kDefaultNeg), std::invalid_argument);
}

TEST_CASE("gates never override padding") {
    Rng rng(6);
    TokenBatch tb = random_batch(2, 5, 10, rng, true);
    const Tensor pad = padding_bias(tb, kDefaultNeg);
    const Tensor scores = random_tensor(rng, {2, 1, 5, 5}, 1.0, false);
    const Tensor topo = softmax(apply_structure_bias(scores, Tensor::full({2, 5, 5}, 1.0), pad, kDefaultNeg));
    for (std::size_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            const double v = topo[((1 * 1 + 0) * 5 + i) * 5 + j];
            row += v;
            if (j >= 3) CHECK(v < 1e-9);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("hand-sized one-layer encoder matches loop oracle") {
    ModelConfig c;
    c.vocab_size = 3;
    c.max_seq_len = 2;
    c.d_model = 4;
    c.n_heads = 1;
    c.n_layers = 1;
    c.d_ff = 4;
    const Model m = random_model(c, 3, 0.7);
    TokenBatch tb{1, 2, {2, 0}, {1, 1}};
    const EncoderOutput out = encoder_forward(m, tb);
    const Mat ref = ref_encoder(m, tb.ids, nullptr);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.final_hidden[t * 4 + i] - ref[t][i]) < 1e-8);
}

TEST_CASE("encoder matches loop oracle with gates, multi-head, multi-layer") {
    const ModelConfig c = small_config();
    const Model m = random_model(c, 21);
    Rng rng(4);
    TokenBatch tb = random_batch(1, 6, c.vocab_size, rng);
    std::vector<std::vector<double>> raw(c.n_layers, std::vector<double>(36));
    std::vector<Tensor> gates;
    for (auto& g : raw) {
        for (double& v : g) v = rng.bernoulli(0.7) ? 1.0 : 0.0;
        gates.emplace_back(Shape{1, 6, 6}, g);
    }
    ForwardOptions opt;
    opt.gates = &gates;
    const EncoderOutput out = encoder_forward(m, tb, opt);
    const Mat ref = ref_encoder(m, tb.ids, &raw);
    double worst = 0.0;
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t i = 0; i < c.d_model; ++i)
            worst = std::max(worst, std::abs(out.final_hidden[t * c.d_model + i] - ref[t][i]));
    CHECK(worst < 1e-8);
    CHECK(out.layer_inputs.size() == c.n_layers);
    CHECK(out.topologies.size() == c.n_layers);
}

TEST_CASE("all-keep gates equal the gate-free path in values and gradients") {
    const ModelConfig c = small_config();
    Model m = random_model(c, 8);
    Rng rng(9);
    TokenBatch tb = random_batch(3, 6, c.vocab_size, rng, true);
    std::vector<Tensor> keep(c.n_layers, Tensor::full({3, 6, 6}, 1.0));

    auto run = [&](const std::vector<Tensor>* gates) {
        zero_grads(m.named_params());
        Tape tape;
        TapeScope scope(tape);
        ForwardOptions opt;
        opt.gates = gates;
        const EncoderOutput out = encoder_forward(m, tb, opt);
        tape.backward(probe(out.final_hidden, 77));
        std::vector<double> grads;
        for (auto& [name, t] : m.named_params()) {
            const auto g = t.grad();
            grads.insert(grads.end(), g.begin(), g.end());
        }
        return std::pair{values(out.final_hidden), grads};
    };
    const auto [h0, g0] = run(nullptr);
    const auto [h1, g1] = run(&keep);
    REQUIRE(h0.size() == h1.size());
    for (std::size_t i = 0; i < h0.size(); ++i) CHECK(std::abs(h0[i] - h1[i]) < 1e-9);
    for (std::size_t i = 0; i < g0.size(); ++i) CHECK(std::abs(g0[i] - g1[i]) < 1e-9);
}

TEST_CASE("topology rows sum to one and masked mass is tiny") {
    const ModelConfig c = small_config();
    const Model m = random_model(c, 12);
    Rng rng(13);
    TokenBatch tb = random_batch(2, 6, c.vocab_size, rng, true);
    std::vector<Tensor> gates;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        Tensor g = Tensor::full({2, 6, 6}, 1.0);
        for (double& v : g.mutable_data()) v = rng.bernoulli(0.6) ? 1.0 : 0.0;
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 6; ++i) g.mutable_data()[(b * 6 + i) * 6 + i] = 1.0;  // keep a survivor
        gates.push_back(g);
    }
    ForwardOptions opt;
    opt.gates = &gates;
    const EncoderOutput out = encoder_forward(m, tb, opt);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const Tensor& t = out.topologies[l];
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t h = 0; h < c.n_heads; ++h)
                for (std::size_t i = 0; i < 6; ++i) {
                    double row = 0.0;
                    for (std::size_t j = 0; j < 6; ++j) {
                        const double v = t[((b * c.n_heads + h) * 6 + i) * 6 + j];
                        CHECK(v >= 0.0);
                        CHECK(v <= 1.0);
                        row += v;
                        if (gates[l][(b * 6 + i) * 6 + j] == 0.0) CHECK(v < 1e-3);
                    }
                    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
                }
    }
}

TEST_CASE("batch permutation permutes outputs") {
    const ModelConfig c = small_config();
    const Model m = random_model(c, 14);
    Rng rng(15);
    TokenBatch tb = random_batch(3, 5, c.vocab_size, rng, true);
    TokenBatch perm = tb;
    const std::size_t order[3] = {2, 0, 1};
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t t = 0; t < 5; ++t) {
            perm.ids[r * 5 + t] = tb.ids[order[r] * 5 + t];
            perm.valid[r * 5 + t] = tb.valid[order[r] * 5 + t];
        }
    const Tensor a = encoder_forward(m, tb).final_hidden;
    const Tensor b = encoder_forward(m, perm).final_hidden;
    const std::size_t row = 5 * c.d_model;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t i = 0; i < row; ++i) CHECK(b[r * row + i] == a[order[r] * row + i]);
}

TEST_CASE("encoder errors") {
    const ModelConfig c = small_config();
    const Model m = random_model(c, 1);
    Rng rng(2);
    CHECK_THROWS_AS(encoder_forward(m, random_batch(1, 9, c.vocab_size, rng)), std::invalid_argument);
    std::vector<Tensor> one(1, Tensor::full({1, 4, 4}, 1.0));
    ForwardOptions opt;
    opt.gates = &one;
    CHECK_THROWS_AS(encoder_forward(m, random_batch(1, 4, c.vocab_size, rng), opt), std::invalid_argument);
    TokenBatch bad{1, 2, {0, 99}, {1, 1}};
    CHECK_THROWS_AS(encoder_forward(m, bad), std::out_of_range);
}

TEST_CASE("heads: affine at origin, shapes, classifier gradient") {
    ModelConfig c = small_config();
    c.vocab_size = 100;
    c.max_seq_len = 16;
    const Model m = random_model(c, 31);
    const Tensor zero = Tensor::zeros({2, c.d_model});
    const Tensor logits = classifier_head(m, zero);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < c.n_classes; ++k) CHECK(logits[b * c.n_classes + k] == m.cls_b[k]);
    CHECK(sentence_order_head(m, zero).shape() == Shape{2, 2});
    Rng rng(3);
    CHECK(mlm_head(m, random_tensor(rng, {2, 16, c.d_model}, 1.0, false)).shape() == Shape{2, 16, 100});

    Tensor h = random_tensor(rng, {3, c.d_model});
    std::vector<Tensor> wrt = {h, m.cls_w, m.cls_b};
    zero_grads(m.named_params());
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe(classifier_head(m, h), 5));
    }
    const auto fd = central_differences([&] { return probe(classifier_head(m, h), 5).item(); }, wrt);
    for (std::size_t i = 0; i < wrt.size(); ++i) CHECK(relative_error(wrt[i].grad(), fd[i]) < 1e-5);
}

TEST_CASE("encoder gradient matches finite differences") {
    ModelConfig c = small_config();
    c.n_layers = 1;
    Model m = random_model(c, 41, 0.3);
    Rng rng(42);
    TokenBatch tb = random_batch(2, 4, c.vocab_size, rng, true);
    std::vector<Tensor> gates(1, Tensor::full({2, 4, 4}, 1.0));
    gates[0].mutable_data()[1] = 0.0;
    ForwardOptions opt;
    opt.gates = &gates;
    auto f = [&] { return probe(classifier_head(m, encoder_forward(m, tb, opt).cls_hidden), 3); };
    NamedParams params = m.named_params();
    zero_grads(params);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(f());
    }
    std::vector<Tensor> wrt;
    for (auto& [name, t] : params) {
        if (name.rfind("heads.mlm", 0) != 0 && name.rfind("heads.sentence", 0) != 0) wrt.push_back(t);
    }
    const auto fd = central_differences([&] { return f().item(); }, wrt);
    // The key bias has an exactly zero gradient (softmax shift invariance), so
    // the floor keeps difference noise on it from reading as a relative error.
    for (std::size_t i = 0; i < wrt.size(); ++i) CHECK(relative_error(wrt[i].grad(), fd[i], 1e-6) < 1e-4);
}

TEST_CASE("dropout path is deterministic under a fixed rng") {
    ModelConfig c = small_config();
    c.dropout_p = 0.2;
    const Model m = random_model(c, 51);
    Rng data(52);
    TokenBatch tb = random_batch(2, 5, c.vocab_size, data);
    Rng r1(7), r2(7);
    ForwardOptions o1, o2;
    o1.training = o2.training = true;
    o1.rng = &r1;
    o2.rng = &r2;
    CHECK(values(encoder_forward(m, tb, o1).final_hidden) == values(encoder_forward(m, tb, o2).final_hidden));
    CHECK(values(encoder_forward(m, tb).final_hidden) != values(encoder_forward(m, tb, o1).final_hidden));
}
