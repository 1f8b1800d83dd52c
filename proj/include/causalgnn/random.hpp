#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace cgnn {

/// Deterministic RNG built on mt19937_64 with hand-rolled distributions so
/// that streams are bit-identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller, caching the spare draw.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

    /// Inverse-CDF draw from a finite distribution (probabilities sum to ~1).
    int categorical(const std::vector<double>& probs) {
        const double u = uniform01();
        double acc = 0.0;
        for (size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    /// Derive an independent stream seed from a base seed and a stream tag
    /// (splitmix64 finalizer over the combined word).
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_{false};
    double spare_{0.0};
};

}  // namespace cgnn
