#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace splitquant {

/// Deterministic random source built on mt19937_64 with hand-rolled variate
/// transforms. mt19937_64 output is fixed by the standard and the transforms
/// below avoid std::*_distribution, whose algorithms vary between standard
/// library implementations, so identical seeds give identical streams on any
/// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (two fresh uniforms per call).
    double normal() {
        double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Laplace(0, scale) via inverse CDF.
    double laplace(double scale) {
        double u = uniform01() - 0.5;
        double s = u < 0 ? -1.0 : 1.0;
        return -scale * s * std::log(1.0 - 2.0 * std::fabs(u));
    }

    /// Cauchy(0, scale) via inverse CDF.
    double cauchy(double scale) {
        double u = uniform01();
        return scale * std::tan(kPi * (u - 0.5));
    }

    /// Uniform integer in [0, n) by rejection sampling (no modulo bias).
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

private:
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 gen_;
};

/// Derives an independent stream seed from a base seed and up to two indices
/// (splitmix64 finalizer). Used to give each trial / row its own stream.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

}  // namespace splitquant
