#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "gradlab/tensor.hpp"

namespace gradlab {

/// Deterministic random stream. Identical seed and call sequence yield
/// identical draws on every platform, so std::normal_distribution (whose
/// algorithm is implementation-defined) is avoided in favour of Box-Muller
/// on raw 53-bit uniforms.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }

    /// Independent sub-stream derived from (seed, label).
    RandomStream substream(const std::string& label) const {
        uint64_t h = seed_ ^ 0x9e3779b97f4a7c15ull;
        for (char c : label) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ull;
        }
        return RandomStream(mix(h));
    }

    RandomStream substream(uint64_t index) const {
        return RandomStream(mix(seed_ ^ (0xbf58476d1ce4e5b9ull + index * 0x94d049bb133111ebull)));
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    uint64_t bits() { return engine_(); }

    /// Integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % n);
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    Tensor<T> normal_tensor(std::vector<int64_t> shape) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(normal());
        return t;
    }

    template <typename T>
    Tensor<T> uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
        Tensor<T> t(std::move(shape));
        for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
        return t;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gradlab
