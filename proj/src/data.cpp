#include "asa/data.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace asa {

namespace {

constexpr std::uint64_t kSplitStride = 1'000'000'007ULL;

void require(bool ok, const std::string& msg) {
    if (!ok) {
        throw std::invalid_argument(msg);
    }
}

Example make_example(const SpuriousTaskConfig& cfg, const TokenPools& pools, int label, double corr, Rng rng) {
    const std::size_t min_len = std::max<std::size_t>(3, (3 * cfg.seq_len) / 4);
    const std::size_t len = min_len + rng.below(cfg.seq_len - min_len + 1);
    const std::size_t content = len - 1;

    std::size_t n_signal = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.signal_density * content)));
    n_signal = std::min(n_signal, content - 1);
    if (n_signal % 2 == 0) {
        n_signal -= 1;  // odd count: a strict majority always exists
    }
    const std::size_t majority = n_signal / 2 + 1;
    const std::size_t n_agree = majority + rng.below(n_signal - majority + 1);

    std::vector<std::size_t> slots(content);
    std::iota(slots.begin(), slots.end(), std::size_t{1});
    for (std::size_t i = slots.size(); i > 1; --i) {
        std::swap(slots[i - 1], slots[rng.below(i)]);
    }

    Example ex;
    ex.label = label;
    ex.tokens.assign(len, 0);
    ex.tokens[0] = tokens::kCls;
    const auto& agree = pools.signal[label];
    const auto& disagree = pools.signal[1 - label];
    std::size_t s = 0;
    for (; s < n_signal; ++s) {
        const auto& pool = s < n_agree ? agree : disagree;
        ex.tokens[slots[s]] = pool[rng.below(pool.size())];
    }
    const bool agrees = rng.bernoulli(corr);
    ex.spurious_token = pools.spurious[agrees ? label : 1 - label];
    ex.spurious_position = slots[s++];
    ex.tokens[ex.spurious_position] = ex.spurious_token;
    for (; s < content; ++s) {
        ex.tokens[slots[s]] = pools.filler[rng.below(pools.filler.size())];
    }
    return ex;
}

std::vector<Example> make_split(const SpuriousTaskConfig& cfg, const TokenPools& pools, std::size_t n, double corr,
                                std::uint64_t split_id) {
    const Rng base(cfg.seed);
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(make_example(cfg, pools, static_cast<int>(i % 2), corr, base.substream(split_id * kSplitStride + i)));
    }
    return out;
}

}  // namespace

void SpuriousTaskConfig::validate() const {
    require(n_classes == 2, "SpuriousTaskConfig: n_classes must be 2");
    require(train_size > 0 && test_id_size > 0 && test_ood_size > 0, "SpuriousTaskConfig: split sizes must be > 0");
    require(seq_len >= 8, "SpuriousTaskConfig: seq_len must be >= 8");
    require(signal_density > 0.0 && signal_density < 1.0, "SpuriousTaskConfig: signal_density must be in (0, 1)");
    require(spurious_corr_train >= 0.0 && spurious_corr_train <= 1.0,
            "SpuriousTaskConfig: spurious_corr_train must be in [0, 1]");
    require(spurious_corr_ood >= 0.0 && spurious_corr_ood <= 1.0,
            "SpuriousTaskConfig: spurious_corr_ood must be in [0, 1]");
    require(signal_pool_size >= 1, "SpuriousTaskConfig: signal_pool_size must be >= 1");
    const std::size_t needed = tokens::kFirstRegular + 2 * signal_pool_size + 2 + 1;
    require(vocab_size >= needed, "SpuriousTaskConfig: vocab_size " + std::to_string(vocab_size) +
                                      " too small for disjoint token pools (need >= " + std::to_string(needed) + ")");
}

TokenPools spurious_token_pools(const SpuriousTaskConfig& cfg) {
    cfg.validate();
    TokenPools p;
    int next = tokens::kFirstRegular;
    for (int c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < cfg.signal_pool_size; ++i) {
            p.signal[c].push_back(next++);
        }
    }
    p.spurious[0] = next++;
    p.spurious[1] = next++;
    for (int t = next; t < static_cast<int>(cfg.vocab_size); ++t) {
        p.filler.push_back(t);
    }
    return p;
}

SpuriousDataset gen_spurious_classification(const SpuriousTaskConfig& cfg) {
    SpuriousDataset d;
    d.pools = spurious_token_pools(cfg);
    d.train = make_split(cfg, d.pools, cfg.train_size, cfg.spurious_corr_train, 0);
    d.test_id = make_split(cfg, d.pools, cfg.test_id_size, cfg.spurious_corr_train, 1);
    d.test_ood = make_split(cfg, d.pools, cfg.test_ood_size, cfg.spurious_corr_ood, 2);
    return d;
}

ClassificationBatch make_classification_batch(std::span<const Example> examples,
                                              std::span<const std::size_t> indices, std::size_t seq_len) {
    ClassificationBatch b;
    b.tokens.batch = indices.size();
    b.tokens.len = seq_len;
    b.tokens.ids.assign(indices.size() * seq_len, tokens::kPad);
    b.tokens.valid.assign(indices.size() * seq_len, 0);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const Example& ex = examples[indices[r]];
        if (ex.tokens.size() > seq_len) {
            throw std::invalid_argument("make_classification_batch: example longer than seq_len");
        }
        for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
            b.tokens.ids[r * seq_len + t] = ex.tokens[t];
            b.tokens.valid[r * seq_len + t] = 1;
        }
        b.labels.push_back(static_cast<double>(ex.label));
    }
    return b;
}

void ToyCorpusConfig::validate() const {
    require(mlm_prob >= 0.0 && mlm_prob < 1.0, "ToyCorpusConfig: mlm_prob must be in [0, 1)");
    require(swap_prob >= 0.0 && swap_prob <= 1.0, "ToyCorpusConfig: swap_prob must be in [0, 1]");
    require(noise_prob >= 0.0 && noise_prob <= 1.0, "ToyCorpusConfig: noise_prob must be in [0, 1]");
    require(seq_len >= 7, "ToyCorpusConfig: seq_len must be >= 7");
    require(vocab_size > static_cast<std::size_t>(tokens::kFirstRegular) + 4,
            "ToyCorpusConfig: vocab_size too small");
    require(corpus_size > 0, "ToyCorpusConfig: corpus_size must be > 0");
}

std::vector<CorpusSequence> gen_toy_corpus(const ToyCorpusConfig& cfg) {
    cfg.validate();
    const std::size_t half = (cfg.seq_len - 3) / 2;
    const std::uint64_t range = cfg.vocab_size - tokens::kFirstRegular;
    const Rng base(cfg.seed);
    std::vector<CorpusSequence> out;
    out.reserve(cfg.corpus_size);
    for (std::size_t n = 0; n < cfg.corpus_size; ++n) {
        Rng rng = base.substream(n);
        const std::uint64_t start = rng.below(range);
        const std::uint64_t stride = 1 + rng.below(3);
        std::vector<int> prog(2 * half);
        for (std::size_t t = 0; t < prog.size(); ++t) {
            const std::uint64_t v = rng.bernoulli(cfg.noise_prob) ? rng.below(range) : (start + t * stride) % range;
            prog[t] = tokens::kFirstRegular + static_cast<int>(v);
        }
        CorpusSequence s;
        s.order_label = rng.bernoulli(cfg.swap_prob) ? 1 : 0;
        const auto a_begin = prog.begin() + (s.order_label ? static_cast<std::ptrdiff_t>(half) : 0);
        const auto b_begin = prog.begin() + (s.order_label ? 0 : static_cast<std::ptrdiff_t>(half));
        s.tokens.push_back(tokens::kCls);
        s.tokens.insert(s.tokens.end(), a_begin, a_begin + static_cast<std::ptrdiff_t>(half));
        s.tokens.push_back(tokens::kSep);
        s.tokens.insert(s.tokens.end(), b_begin, b_begin + static_cast<std::ptrdiff_t>(half));
        s.tokens.push_back(tokens::kSep);
        out.push_back(std::move(s));
    }
    return out;
}

MlmBatch mlm_mask(std::span<const CorpusSequence> corpus, std::span<const std::size_t> indices,
                  std::size_t seq_len, std::size_t vocab_size, double p, Rng& rng) {
    MlmBatch b;
    b.tokens.batch = indices.size();
    b.tokens.len = seq_len;
    b.tokens.ids.assign(indices.size() * seq_len, tokens::kPad);
    b.tokens.valid.assign(indices.size() * seq_len, 0);
    b.targets.assign(indices.size() * seq_len, -1);
    const std::uint64_t range = vocab_size - tokens::kFirstRegular;
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const CorpusSequence& s = corpus[indices[r]];
        if (s.tokens.size() > seq_len) {
            throw std::invalid_argument("mlm_mask: sequence longer than seq_len");
        }
        b.order_labels.push_back(s.order_label);
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
            const std::size_t at = r * seq_len + t;
            int id = s.tokens[t];
            b.tokens.valid[at] = 1;
            if (id >= tokens::kFirstRegular && p > 0.0 && rng.bernoulli(p)) {
                b.targets[at] = id;
                ++b.n_selected;
                const double u = rng.uniform();
                if (u < 0.8) {
                    id = tokens::kMask;
                    ++b.n_mask_token;
                } else if (u < 0.9) {
                    id = tokens::kFirstRegular + static_cast<int>(rng.below(range));
                    ++b.n_random_token;
                } else {
                    ++b.n_unchanged;
                }
            }
            b.tokens.ids[at] = id;
        }
    }
    return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    return idx;
}

}  // namespace asa
