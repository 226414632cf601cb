// Deterministic random streams.
//
// Each stream is keyed by (master seed, owner, purpose, index) so that
// different agents and stages never share draws. The distribution transforms
// are written out here because the std:: distributions are not required to
// produce the same sequence on every standard library.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace vruco {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t owner, std::string_view purpose,
                                   std::uint64_t index) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ owner);
    h = splitmix64(h ^ hash_tag(purpose));
    return splitmix64(h ^ index);
}

class Rng {
public:
    explicit Rng(std::uint64_t key) : engine_(key) {}
    Rng(std::uint64_t seed, std::uint64_t owner, std::string_view purpose, std::uint64_t index)
        : engine_(stream_key(seed, owner, purpose, index)) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Knuth's product method; fine for the small rates used here.
    int poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        const double limit = std::exp(-lambda);
        int k = 0;
        double p = uniform();
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        return k;
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace vruco
