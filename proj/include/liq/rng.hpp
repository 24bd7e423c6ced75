#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace liq {

// splitmix64 step; used to expand seeds into stream states.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256** generator. Hand-rolled so that streams are bit-identical
// across platforms and standard libraries; std:: distributions give no such
// guarantee.
class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Exponential waiting time; +inf for rate <= 0.
    double exponential(double rate) {
        if (rate <= 0.0) return std::numeric_limits<double>::infinity();
        return -std::log1p(-next_double()) / rate;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

// Deterministic per-(seed, path, purpose) stream derivation. A counter-based
// split: the stream consumed for one purpose does not depend on how much
// randomness other purposes used, which is what makes paired-path
// comparisons with common random numbers work.
inline Rng derive_stream(std::uint64_t master_seed, std::uint64_t path_index, std::uint64_t purpose) {
    std::uint64_t s = master_seed;
    std::uint64_t a = splitmix64(s) ^ (path_index * 0xd1342543de82ef95ull);
    std::uint64_t b = a + 0x2545f4914f6cdd1dull * (purpose + 1);
    return Rng(splitmix64(b));
}

} // namespace liq
