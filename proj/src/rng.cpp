#include "asa/rng.hpp"

#include <cmath>
#include <numbers>

namespace asa {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng::Rng(RngState state) : state_(state), key_(splitmix64(state.seed ^ 0x2545f4914f6cdd1dULL)) {}

std::uint64_t Rng::next_u64() { return splitmix64(key_ ^ splitmix64(state_.counter++)); }

double Rng::uniform() {
    // 53 random bits, offset by half a ulp so 0 and 1 are unreachable.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) {
        return 0;
    }
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
        const std::uint64_t v = next_u64();
        if (v < limit) {
            return v % n;
        }
    }
}

Rng Rng::substream(std::uint64_t index) const {
    return Rng(RngState{splitmix64(state_.seed + 0x632be59bd9b4e019ULL * (index + 1)), 0});
}

}  // namespace asa
