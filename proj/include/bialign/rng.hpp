#pragma once

#include <cstdint>
#include <vector>

namespace bialign {

// Deterministic random stream: xoshiro256** seeded through SplitMix64.
// The integer-level stream is identical across platforms and compilers, so
// anything derived from integer draws only (datasets, subset choices,
// shuffles) is byte-reproducible everywhere. Floating-point draws are exact
// arithmetic on those integers except normal(), which goes through libm.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; one spare cached per pair.
    double normal();
    double normal(double mean, double stddev);

    // Uniform integer in [0, n) by bitmask rejection; n >= 1.
    std::uint64_t below(std::uint64_t n);
    // Uniform integer in [lo, hi] inclusive.
    long long range(long long lo, long long hi);

    // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<int> choice(int n, int k);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Stable stream splitting: an independent seed for (seed, stream_id).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream_id);

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace bialign
