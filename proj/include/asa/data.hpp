#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "asa/rng.hpp"
#include "asa/transformer.hpp"

namespace asa {

namespace tokens {
inline constexpr int kCls = 0;
inline constexpr int kSep = 1;
inline constexpr int kMask = 2;
inline constexpr int kPad = 3;
inline constexpr int kFirstRegular = 4;
}  // namespace tokens

// --- Spurious-keyword classification ------------------------------------

/// Binary task whose true label is the majority class among scattered
/// "signal" tokens, plus one keyword token that agrees with the label with
/// a split-dependent probability.
struct SpuriousTaskConfig {
    std::size_t vocab_size = 200;
    std::size_t seq_len = 32;
    std::size_t n_classes = 2;
    std::size_t train_size = 4000;
    std::size_t test_id_size = 1000;
    std::size_t test_ood_size = 1000;
    double spurious_corr_train = 0.95;
    double spurious_corr_ood = 0.0;
    double signal_density = 0.25;
    std::size_t signal_pool_size = 8;  // signal token ids per class
    std::uint64_t seed = 0;

    void validate() const;
};

struct TokenPools {
    std::vector<int> signal[2];
    int spurious[2] = {0, 0};
    std::vector<int> filler;
};

struct Example {
    std::vector<int> tokens;  // unpadded, starts with CLS
    int label = 0;
    int spurious_token = 0;
    std::size_t spurious_position = 0;
};

struct SpuriousDataset {
    TokenPools pools;
    std::vector<Example> train;
    std::vector<Example> test_id;
    std::vector<Example> test_ood;
};

TokenPools spurious_token_pools(const SpuriousTaskConfig& cfg);
SpuriousDataset gen_spurious_classification(const SpuriousTaskConfig& cfg);

struct ClassificationBatch {
    TokenBatch tokens;
    std::vector<double> labels;
};

ClassificationBatch make_classification_batch(std::span<const Example> examples,
                                              std::span<const std::size_t> indices, std::size_t seq_len);

// --- Toy corpus for masked language modelling ----------------------------

struct ToyCorpusConfig {
    std::size_t vocab_size = 200;
    std::size_t seq_len = 32;
    std::size_t corpus_size = 4000;
    double mlm_prob = 0.15;
    double swap_prob = 0.5;
    double noise_prob = 0.0;  // chance a progression token is replaced by a random one
    std::uint64_t seed = 0;

    void validate() const;
};

/// CLS, segment A, SEP, segment B, SEP. Segments are consecutive halves of
/// a noisy arithmetic progression; order_label = 1 when they were swapped.
struct CorpusSequence {
    std::vector<int> tokens;
    int order_label = 0;
};

std::vector<CorpusSequence> gen_toy_corpus(const ToyCorpusConfig& cfg);

struct MlmBatch {
    TokenBatch tokens;
    std::vector<int> targets;  // original id at selected positions, -1 elsewhere
    std::vector<int> order_labels;
    std::size_t n_selected = 0;
    std::size_t n_mask_token = 0;
    std::size_t n_random_token = 0;
    std::size_t n_unchanged = 0;
};

/// Selects each regular token with probability p; of the selections 80%
/// become MASK, 10% a random regular token, 10% stay unchanged.
MlmBatch mlm_mask(std::span<const CorpusSequence> corpus, std::span<const std::size_t> indices,
                  std::size_t seq_len, std::size_t vocab_size, double p, Rng& rng);

/// Fisher-Yates over [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace asa
