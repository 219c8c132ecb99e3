#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "asa/adversary.hpp"
#include "asa/rng.hpp"
#include "asa/tensor.hpp"

namespace asa {

enum class MaskKind { bernoulli, scheduled, magnitude, asa };

std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& name);

struct MaskStrategy {
    MaskKind kind = MaskKind::bernoulli;
    double p = 0.1;                 // bernoulli
    std::vector<double> schedule;   // scheduled: per-step masking probability
    double proportion = 0.1;        // magnitude
    bool global_magnitude = false;  // magnitude: top-k per matrix instead of per row

    void validate() const;
};

/// Each valid pair masked independently with probability p; padding kept.
GateSet bernoulli_gates(std::size_t n_layers, const Tensor& valid_mask, double p, Rng& rng);

/// Bernoulli gates with p = schedule[step], clamped to the last entry.
GateSet scheduled_gates(std::size_t n_layers, const Tensor& valid_mask, std::size_t step,
                        std::span<const double> schedule, Rng& rng);

/// Masks the ceil(proportion * valid) largest head-averaged pre-softmax
/// scores per query row (or per matrix when `global`). Ties go to the lower
/// key index. Padding query rows keep everything.
GateSet magnitude_gates(const std::vector<Tensor>& scores, double proportion, const Tensor& valid_mask,
                        bool global = false);

/// Number of units to mask out of `valid` at the given proportion.
std::size_t magnitude_count(double proportion, std::size_t valid);

/// Reads a {step, masked_fraction} JSONL schedule into a dense per-step list.
std::vector<double> load_schedule(const std::filesystem::path& path);

}  // namespace asa
