#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace bevcell::rng {

// Deterministic across platforms and standard-library versions, unlike the
// <random> distributions whose output is implementation-defined. Every
// seeded component of the library draws from this generator.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Derive a child seed from a parent seed and a stream tag.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    SplitMix64 g(seed ^ (0x632be59bd9b4e019ull + tag * 0x9e3779b97f4a7c15ull));
    return g.next();
}

/// Uniform in [0, 1), 53-bit resolution.
inline double uniform01(SplitMix64& g) {
    return static_cast<double>(g.next() >> 11) * 0x1.0p-53;
}

/// Uniform in [lo, hi).
inline double uniform(SplitMix64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

/// Unbiased integer in [0, n); rejection sampling.
inline std::uint64_t bounded(SplitMix64& g, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = g.next();
    } while (x >= limit);
    return x % n;
}

/// Standard normal via Box-Muller (hand-rolled for determinism).
inline double normal(SplitMix64& g) {
    // u1 in (0, 1] so the log is finite
    const double u1 = (static_cast<double>(g.next() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(bounded(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace bevcell::rng
