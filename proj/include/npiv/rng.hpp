#pragma once

// Deterministic random numbers. The standard distributions are allowed to
// differ between library implementations, so everything that feeds a
// reproducible output is derived here from raw 64-bit draws.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "npiv/error.hpp"

namespace npiv {

/// SplitMix64. Satisfies UniformRandomBitGenerator.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// +1 or -1 with equal probability.
    int sign() { return ((*this)() >> 63) ? 1 : -1; }

    std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : (*this)() % bound; }

private:
    std::uint64_t state_;
};

/// Samples indices from a fixed probability table by inverse CDF.
class DiscreteSampler {
public:
    explicit DiscreteSampler(std::span<const double> probs)
    {
        if (probs.empty()) {
            throw InvalidArgument("DiscreteSampler: empty probability table");
        }
        cdf_.reserve(probs.size());
        double acc = 0.0;
        for (double p : probs) {
            if (p < 0.0) {
                throw InvalidArgument("DiscreteSampler: negative probability");
            }
            acc += p;
            cdf_.push_back(acc);
        }
        for (double& c : cdf_) {
            c /= acc;
        }
        cdf_.back() = 1.0;
    }

    std::size_t operator()(Rng& rng) const
    {
        const double u = rng.uniform();
        std::size_t lo = 0;
        std::size_t hi = cdf_.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (u < cdf_[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        return lo;
    }

private:
    std::vector<double> cdf_;
};

/// FNV-1a, 64 bit. Stable across platforms and runs.
class StableHash {
public:
    StableHash& add(std::string_view bytes)
    {
        for (unsigned char c : bytes) {
            h_ ^= c;
            h_ *= 0x100000001B3ULL;
        }
        return *this;
    }

    StableHash& add(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            h_ ^= (v >> (8 * i)) & 0xFFu;
            h_ *= 0x100000001B3ULL;
        }
        // separator so that ("ab", 1) and ("a", "b"...) cannot collide trivially
        h_ ^= 0xFFu;
        h_ *= 0x100000001B3ULL;
        return *this;
    }

    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

/// Replication seed from (master seed, estimator, n, replication index).
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view estimator,
                                 std::uint64_t n, std::uint64_t rep)
{
    StableHash h;
    h.add(master).add(estimator).add(std::uint64_t{0}).add(n).add(rep);
    // one SplitMix round decorrelates neighbouring hashes
    Rng mix(h.value());
    return mix();
}

} // namespace npiv
