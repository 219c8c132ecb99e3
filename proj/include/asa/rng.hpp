#pragma once

#include <cstdint>

namespace asa {

/// Position in a counter-based random stream. Two states with equal
/// (seed, counter) produce the same samples.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    friend bool operator==(const RngState&, const RngState&) = default;
};

/// Counter-based generator: sample k of a stream is a pure hash of
/// (seed, k), so any call site can fork an independent reproducible stream.
class Rng {
public:
    Rng() : Rng(RngState{}) {}
    explicit Rng(std::uint64_t seed) : Rng(RngState{seed, 0}) {}
    explicit Rng(RngState state);

    const RngState& state() const { return state_; }

    std::uint64_t next_u64();

    /// Uniform on the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (consumes two counters).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Independent stream keyed by `index`; does not advance this stream.
    Rng substream(std::uint64_t index) const;

private:
    RngState state_{};
    std::uint64_t key_ = 0;  // hash of the seed, fixed per stream
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace asa
