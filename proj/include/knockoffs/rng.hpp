#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace knockoff {

// All randomness in the library flows through explicit seeds.  Substreams are
// derived by hashing a root seed together with integer stream labels, so that
// e.g. row i of a knockoff sample or randomization k of feature j always sees
// the same draws no matter how work is scheduled across threads.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a stream key from a seed and a label path, e.g. {row, i} or {j, k}.
inline std::uint64_t derive_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t v : labels) {
        h = splitmix64(h ^ v);
    }
    return h;
}

// xoshiro256++ with splitmix-expanded state.  Small, fast, and stable across
// platforms, unlike the distributions in <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x = splitmix64(x);
            word = x;
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
        return Rng(derive_stream(seed, labels));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on (0, 1]; never returns 0 so log() is safe.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Uniform on [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Modulo bias is < 2^-40 for any n used here (n far below 2^24).
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    bool bernoulli(double prob) { return uniform() <= prob; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
    bool has_spare_;
    double spare_;
};

} // namespace knockoff
