#include "bialign/rng.hpp"

#include "bialign/errors.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace bialign {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double theta = 2.0 * std::numbers::pi * uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - uniform()));
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw UsageError("Rng::below requires n >= 1");
    if (n == 1) return 0;
    const int bits = std::bit_width(n - 1);
    const std::uint64_t mask = (bits >= 64) ? ~0ull : ((1ull << bits) - 1);
    std::uint64_t r;
    do {
        r = next_u64() & mask;
    } while (r >= n);
    return r;
}

long long Rng::range(long long lo, long long hi) {
    if (hi < lo) throw UsageError("Rng::range requires hi >= lo");
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

std::vector<int> Rng::choice(int n, int k) {
    if (k < 0 || k > n) throw UsageError("Rng::choice requires 0 <= k <= n");
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const std::size_t j =
            static_cast<std::size_t>(i) +
            static_cast<std::size_t>(below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t sm = seed ^ (0xA0761D6478BD642Full + stream_id * 0xE7037ED1A0B428DBull);
    const std::uint64_t a = splitmix64(sm);
    return a ^ splitmix64(sm);
}

} // namespace bialign
