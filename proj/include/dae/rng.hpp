#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dae {

// Deterministic random stream with an explicit 256-bit state
// (xoshiro256++ seeded through splitmix64). The state is plain data so a
// training run can checkpoint it and resume bit-identically; the standard
// <random> distributions are avoided because their algorithms (and hence
// their exact output sequences) are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            word = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

    // Unbiased integer in [0, bound). bound must be nonzero.
    uint64_t below(uint64_t bound) {
        const uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform_f32() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. The second value of each pair is
    // discarded so the stream position depends only on call count.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Derive an independent stream (for per-volume / per-worker use).
    Rng split(uint64_t stream_index) const {
        return Rng(state_[0] ^ (stream_index * 0x9e3779b97f4a7c15ull + 0x6a09e667f3bcc909ull));
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
};

} // namespace dae
