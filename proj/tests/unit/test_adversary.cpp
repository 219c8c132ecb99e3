#include <doctest.h>

#include <cmath>

#include "asa/adversary.hpp"
#include "asa/objectives.hpp"
#include "asa/ops.hpp"
#include "random_tensors.hpp"

using namespace asa;
using asa::testing::random_tensor;
using asa::testing::values;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.d_ff = 16;
    return c;
}

TokenBatch batch_with_padding(std::size_t b, std::size_t len, std::size_t n_pad, std::size_t vocab, Rng& rng) {
    TokenBatch tb{b, len, {}, {}};
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t t = 0; t < len; ++t) {
            tb.ids.push_back(static_cast<int>(rng.below(vocab)));
            tb.valid.push_back(r % 2 == 1 && t >= len - n_pad ? 0 : 1);
        }
    return tb;
}

GateSet fixed_gates(std::vector<std::vector<double>> layers, const Shape& shape) {
    GateSet gs;
    gs.valid_mask = Tensor::full(shape, 1.0);
    for (auto& g : layers) {
        gs.gates.emplace_back(shape, std::move(g));
    }
    return gs;
}

}  // namespace

TEST_CASE("adversary logits: zero map, loop oracle, shape, bad layer") {
    const ModelConfig c = tiny();
    Rng rng(1);
    AdversaryParams p = AdversaryParams::init(c, 4, rng, 0.5);
    const Tensor h = random_tensor(rng, {2, 8, c.d_model}, 1.0, false);
    const Tensor out = adversary_logits(h, p, 1);
    CHECK(out.shape() == Shape{2, 8, 8});

    double worst = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                double dot = 0.0;
                for (std::size_t a = 0; a < 4; ++a) {
                    double qi = p.b_q[1][a], kj = p.b_k[1][a];
                    for (std::size_t d = 0; d < c.d_model; ++d) {
                        qi += h[(b * 8 + i) * c.d_model + d] * p.w_q[1][d * 4 + a];
                        kj += h[(b * 8 + j) * c.d_model + d] * p.w_k[1][d * 4 + a];
                    }
                    dot += qi * kj;
                }
                worst = std::max(worst, std::abs(dot / 2.0 - out[(b * 8 + i) * 8 + j]));
            }
    CHECK(worst < 1e-10);

    for (auto& [name, t] : p.named_params())
        for (double& v : t.mutable_data()) v = 0.0;
    const Tensor zero = adversary_logits(h, p, 0);
    for (double v : zero.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(adversary_logits(h, p, 2), std::out_of_range);
}

TEST_CASE("sample_gates: saturation, padding forced keep, Monte Carlo half") {
    Rng rng(2);
    AsaConfig cfg;
    TokenBatch tb = batch_with_padding(2, 6, 2, 16, rng);
    const Tensor valid = valid_pair_mask(tb);
    std::vector<Tensor> big(2, Tensor::full({2, 6, 6}, 20.0));
    const GateSet keep = sample_gates(big, cfg, valid, rng);
    CHECK(mask_stats(keep).overall_masked_fraction == 0.0);
    CHECK(masked_fraction_penalty(keep).item() == 0.0);

    std::vector<Tensor> low(2, Tensor::full({2, 6, 6}, -20.0));
    const GateSet drop = sample_gates(low, cfg, valid, rng);
    for (std::size_t i = 0; i < 72; ++i) {
        CHECK(drop.gates[0][i] == (valid[i] == 0.0 ? 1.0 : 0.0));
    }
    CHECK(mask_stats(drop).overall_masked_fraction == 1.0);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(seed);
        TokenBatch full{8, 32, std::vector<int>(256, 4), std::vector<std::uint8_t>(256, 1)};
        const GateSet g = sample_gates({Tensor::zeros({8, 32, 32})}, cfg, valid_pair_mask(full), r);
        CHECK(std::abs(mask_stats(g).overall_masked_fraction - 0.5) < 0.02);
    }
}

TEST_CASE("masked fraction penalty: counting and layer mean") {
    CHECK(masked_fraction_penalty(fixed_gates({std::vector<double>(16, 1.0)}, {1, 4, 4})).item() == 0.0);
    std::vector<double> g(16, 1.0);
    g[0] = g[5] = g[7] = g[12] = 0.0;
    CHECK(masked_fraction_penalty(fixed_gates({g}, {1, 4, 4})).item() == doctest::Approx(0.25).epsilon(1e-15));

    std::vector<double> a(10, 1.0), b(10, 1.0);
    a[3] = 0.0;
    b[0] = b[1] = b[2] = 0.0;
    const GateSet two = fixed_gates({a, b}, {1, 10, 1});
    CHECK(masked_fraction_penalty(two).item() == doctest::Approx(0.2).epsilon(1e-15));
    const MaskStats s = mask_stats(two);
    CHECK(s.per_layer_masked_fraction[0] == doctest::Approx(0.1));
    CHECK(s.per_layer_masked_fraction[1] == doctest::Approx(0.3));
    CHECK(s.overall_masked_fraction == doctest::Approx(0.2));

    GateSet empty = fixed_gates({std::vector<double>(4, 1.0)}, {1, 2, 2});
    empty.valid_mask = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(masked_fraction_penalty(empty), std::invalid_argument);
}

TEST_CASE("asa_forward: all-keep reduces to clean, zero adversary gives half masking") {
    const ModelConfig c = tiny();
    Rng rng(3);
    const Model m = Model::init(c, rng);
    AdversaryParams adv = AdversaryParams::init(c, 0 + c.d_head(), rng);
    TokenBatch tb = batch_with_padding(4, 8, 3, c.vocab_size, rng);
    AsaConfig cfg;

    const GateSet keep = all_keep_gates(c.n_layers, valid_pair_mask(tb));
    AsaForwardOptions opt;
    opt.forced_gates = &keep;
    Rng r1(5);
    const AsaOutput out = asa_forward(m, adv, tb, cfg, r1, opt);
    for (std::size_t i = 0; i < out.clean.final_hidden.numel(); ++i)
        CHECK(std::abs(out.clean.final_hidden[i] - out.biased.final_hidden[i]) < 1e-9);

    for (auto& [name, t] : adv.named_params())
        for (double& v : t.mutable_data()) v = 0.0;
    Rng r2(6), r3(6);
    const AsaOutput a = asa_forward(m, adv, tb, cfg, r2);
    AsaConfig other = cfg;
    other.tau = 5.0;
    const AsaOutput b = asa_forward(m, adv, tb, other, r3);
    CHECK(values(a.biased.final_hidden) == values(b.biased.final_hidden));
    const double frac = mask_stats(a.gates).overall_masked_fraction;
    CHECK(frac > 0.35);
    CHECK(frac < 0.65);
    const double kl = kl_divergence(classifier_head(m, a.clean.cls_hidden), classifier_head(m, a.biased.cls_hidden)).item();
    CHECK(kl > 0.0);
}

TEST_CASE("asa config validation") {
    AsaConfig cfg;
    cfg.bin_temp = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AsaConfig{};
    cfg.tau = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
