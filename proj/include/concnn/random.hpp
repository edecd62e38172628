#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <utility>

namespace concnn {

/// SplitMix64 finalizer; used both as the generator step and as the key mixer
/// that derives independent substreams.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31U);
}

/// Small splittable 64-bit generator (SplitMix64). A substream is addressed by
/// a seed plus a tuple of keys, e.g. (purpose, product, week), so that growing
/// d or n never reshuffles the draws of existing cells.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit constexpr Rng(std::uint64_t seed = 0) noexcept : state_(mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
        std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
        for (std::uint64_t k : keys) {
            h = mix64(h ^ mix64(k + 0x9e3779b97f4a7c15ULL));
        }
        return Rng(h);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>((*this)() >> 11U) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) noexcept {
        // Lemire's multiply-shift; the residual bias is below 2^-64 * bound.
        const unsigned __int128 product = static_cast<unsigned __int128>((*this)()) * bound;
        return static_cast<std::uint64_t>(product >> 64U);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates; written out so the permutation does not depend on the
/// standard library's shuffle implementation.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Poisson(lambda) draw. Knuth's multiplication method below 30, Hormann's
/// PTRS transformed rejection at and above 30.
inline std::uint64_t sample_poisson(double lambda, Rng& rng) {
    if (!(lambda > 0.0)) {
        return 0;
    }
    if (lambda < 30.0) {
        const double limit = std::exp(-lambda);
        std::uint64_t k = 0;
        double p = rng.uniform();
        while (p > limit) {
            ++k;
            p *= rng.uniform();
        }
        return k;
    }
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = rng.uniform() - 0.5;
        const double v = rng.uniform();
        const double us = 0.5 - std::fabs(u);
        const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= vr) {
            return static_cast<std::uint64_t>(k);
        }
        if (k < 0.0 || (us < 0.013 && v > us)) {
            continue;
        }
        if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
            -lambda + k * loglam - std::lgamma(k + 1.0)) {
            return static_cast<std::uint64_t>(k);
        }
    }
}

} // namespace concnn
