#include "asa/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace asa {

namespace {

void require_fraction(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(std::string("MaskStrategy: ") + what + " must be in [0, 1]");
    }
}

void check_valid_mask(const Tensor& valid_mask) {
    if (valid_mask.rank() != 3 || valid_mask.dim(1) != valid_mask.dim(2)) {
        throw ShapeError("valid mask must be [B, L, L], got " + shape_str(valid_mask.shape()));
    }
}

}  // namespace

std::string to_string(MaskKind kind) {
    switch (kind) {
        case MaskKind::bernoulli: return "bernoulli";
        case MaskKind::scheduled: return "scheduled";
        case MaskKind::magnitude: return "magnitude";
        case MaskKind::asa: return "asa";
    }
    return "unknown";
}

MaskKind parse_mask_kind(const std::string& name) {
    for (MaskKind k : {MaskKind::bernoulli, MaskKind::scheduled, MaskKind::magnitude, MaskKind::asa}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown mask kind '" + name + "'");
}

void MaskStrategy::validate() const {
    require_fraction(p, "p");
    require_fraction(proportion, "proportion");
    for (double s : schedule) {
        require_fraction(s, "schedule entries");
    }
    if (kind == MaskKind::scheduled && schedule.empty()) {
        throw std::invalid_argument("MaskStrategy: scheduled masking needs a non-empty schedule");
    }
}

GateSet bernoulli_gates(std::size_t n_layers, const Tensor& valid_mask, double p, Rng& rng) {
    check_valid_mask(valid_mask);
    require_fraction(p, "p");
    GateSet gs;
    gs.valid_mask = valid_mask;
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<double> g(valid_mask.numel(), 1.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (valid_mask[i] != 0.0 && rng.bernoulli(p)) {
                g[i] = 0.0;
            }
        }
        gs.gates.emplace_back(valid_mask.shape(), std::move(g));
    }
    return gs;
}

GateSet scheduled_gates(std::size_t n_layers, const Tensor& valid_mask, std::size_t step,
                        std::span<const double> schedule, Rng& rng) {
    if (schedule.empty()) {
        throw std::invalid_argument("scheduled_gates: empty schedule");
    }
    return bernoulli_gates(n_layers, valid_mask, schedule[std::min(step, schedule.size() - 1)], rng);
}

std::size_t magnitude_count(double proportion, std::size_t valid) {
    // The small slack keeps products like 0.1 * 10 from rounding up to 2.
    const double k = std::ceil(proportion * static_cast<double>(valid) - 1e-9);
    return std::min(valid, static_cast<std::size_t>(std::max(0.0, k)));
}

GateSet magnitude_gates(const std::vector<Tensor>& scores, double proportion, const Tensor& valid_mask, bool global) {
    check_valid_mask(valid_mask);
    require_fraction(proportion, "proportion");
    const std::size_t bsz = valid_mask.dim(0), len = valid_mask.dim(1);
    GateSet gs;
    gs.valid_mask = valid_mask;
    for (const Tensor& s : scores) {
        if (s.rank() != 4 || s.dim(0) != bsz || s.dim(2) != len || s.dim(3) != len) {
            throw ShapeError("magnitude_gates(scores)", Shape{bsz, 0, len, len}, s.shape());
        }
        const std::size_t heads = s.dim(1);
        std::vector<double> avg(bsz * len * len, 0.0);
        for (std::size_t b = 0; b < bsz; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t ij = 0; ij < len * len; ++ij) {
                    avg[b * len * len + ij] += s[(b * heads + h) * len * len + ij] / static_cast<double>(heads);
                }

        std::vector<double> g(bsz * len * len, 1.0);
        std::vector<std::size_t> cand;
        auto mask_top = [&](std::vector<std::size_t>& idx) {
            const std::size_t k = magnitude_count(proportion, idx.size());
            // Indices are flat and ascending, so a stable sort breaks ties by key position.
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) { return avg[a] > avg[c]; });
            for (std::size_t n = 0; n < k; ++n) {
                g[idx[n]] = 0.0;
            }
        };
        for (std::size_t b = 0; b < bsz; ++b) {
            if (global) {
                cand.clear();
                for (std::size_t ij = 0; ij < len * len; ++ij) {
                    if (valid_mask[b * len * len + ij] != 0.0) {
                        cand.push_back(b * len * len + ij);
                    }
                }
                mask_top(cand);
                continue;
            }
            for (std::size_t i = 0; i < len; ++i) {
                cand.clear();
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t at = (b * len + i) * len + j;
                    if (valid_mask[at] != 0.0) {
                        cand.push_back(at);
                    }
                }
                mask_top(cand);
            }
        }
        gs.gates.emplace_back(valid_mask.shape(), std::move(g));
    }
    return gs;
}

std::vector<double> load_schedule(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open schedule file " + path.string());
    }
    std::vector<std::pair<std::size_t, double>> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            entries.emplace_back(j.at("step").get<std::size_t>(), j.at("masked_fraction").get<double>());
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (entries.empty()) {
        throw std::runtime_error("schedule file " + path.string() + " is empty");
    }
    std::sort(entries.begin(), entries.end());
    std::vector<double> dense(entries.back().first + 1, entries.front().second);
    // Steps missing from the file inherit the previous entry.
    std::size_t e = 0;
    for (std::size_t s = 0; s < dense.size(); ++s) {
        while (e + 1 < entries.size() && entries[e + 1].first <= s) {
            ++e;
        }
        dense[s] = entries[e].first <= s ? entries[e].second : entries.front().second;
    }
    for (double v : dense) {
        require_fraction(v, "schedule entries");
    }
    return dense;
}

}  // namespace asa
