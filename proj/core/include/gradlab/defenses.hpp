#pragma once

#include <algorithm>
#include <numeric>

#include "gradlab/diffcore.hpp"
#include "gradlab/random.hpp"

namespace gradlab {

enum class DefenseKind { None, Dp, Gc, Precode, Cvb };

/// Gradient-perturbation defense configuration. PRECODE/CVB live in the model
/// spec; this selects what happens to gradients before exchange.
struct DefenseSpec {
    DefenseKind kind = DefenseKind::None;
    double clip = 20.0;       // DP clipping threshold C
    double noise = 0.1;       // DP noise multiplier sigma
    double prune_ratio = 0.9; // GC pruning ratio p

    void validate() const {
        if (kind == DefenseKind::Dp && (clip <= 0 || noise < 0))
            throw InvalidSpec("DP requires C > 0 and sigma >= 0");
        if (kind == DefenseKind::Gc && (prune_ratio < 0 || prune_ratio >= 1))
            throw InvalidSpec("GC requires 0 <= p < 1");
    }
};

/// Per-sample clipping to global L2 norm <= C, then Gaussian noise with
/// standard deviation C*sigma added once to the batch sum before averaging.
template <typename T>
LayerGradients<T> noisy_gradients(const std::vector<LayerGradients<T>>& per_sample, double clip,
                                  double sigma, RandomStream& rng) {
    if (per_sample.empty()) throw InvalidInput("noisy_gradients: empty batch");
    if (clip <= 0) throw InvalidSpec("noisy_gradients: clip threshold must be positive");
    const auto& first = per_sample.front();
    for (const auto& g : per_sample)
        if (!g.same_layout(first)) throw InvalidInput("noisy_gradients: inconsistent layouts");

    LayerGradients<T> out;
    for (const auto& e : first.entries)
        out.entries.push_back({e.layer, e.kind, e.group, Tensor<T>(e.grad.shape)});

    for (const auto& sample : per_sample) {
        double sq = 0;
        for (const auto& e : sample.entries) sq += static_cast<double>(squared_norm(e.grad));
        double norm = std::sqrt(sq);
        double factor = norm > clip ? clip / norm : 1.0;
        for (size_t i = 0; i < out.entries.size(); ++i) {
            const auto& src = sample.entries[i].grad;
            auto& dst = out.entries[i].grad;
            for (int64_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<T>(factor) * src[j];
        }
    }

    double b = static_cast<double>(per_sample.size());
    double noise_std = clip * sigma;
    for (auto& e : out.entries)
        for (auto& v : e.grad.data) {
            if (noise_std > 0) v += static_cast<T>(noise_std * rng.normal());
            v = static_cast<T>(v / b);
        }
    return out;
}

/// Prunes the floor(p*n) smallest-magnitude entries of every layer to zero.
/// Ties break by first occurrence, so the result is deterministic.
template <typename T>
LayerGradients<T> compress_gradients(const LayerGradients<T>& grads, double p) {
    if (p < 0 || p >= 1) throw InvalidSpec("compress_gradients: p must be in [0, 1)");
    LayerGradients<T> out = grads;
    for (auto& e : out.entries) {
        int64_t n = e.grad.size();
        int64_t k = static_cast<int64_t>(p * static_cast<double>(n));
        if (k == 0) continue;
        std::vector<int64_t> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
            return std::abs(e.grad[a]) < std::abs(e.grad[b]);
        });
        for (int64_t i = 0; i < k; ++i) e.grad[idx[static_cast<size_t>(i)]] = T(0);
    }
    return out;
}

/// Applies the configured perturbation to a batch of per-sample gradients.
/// PRECODE/CVB are model-side defenses and pass through unchanged.
template <typename T>
LayerGradients<T> apply_defense(const std::vector<LayerGradients<T>>& per_sample,
                                const DefenseSpec& defense, RandomStream& rng) {
    if (per_sample.empty()) throw InvalidInput("apply_defense: empty batch");
    defense.validate();
    if (defense.kind == DefenseKind::Dp)
        return noisy_gradients(per_sample, defense.clip, defense.noise, rng);

    LayerGradients<T> mean;
    for (const auto& e : per_sample.front().entries)
        mean.entries.push_back({e.layer, e.kind, e.group, Tensor<T>(e.grad.shape)});
    double b = static_cast<double>(per_sample.size());
    for (const auto& sample : per_sample)
        for (size_t i = 0; i < mean.entries.size(); ++i) {
            const auto& src = sample.entries[i].grad;
            auto& dst = mean.entries[i].grad;
            for (int64_t j = 0; j < dst.size(); ++j) dst[j] += static_cast<T>(src[j] / b);
        }
    if (defense.kind == DefenseKind::Gc) return compress_gradients(mean, defense.prune_ratio);
    return mean;
}

}  // namespace gradlab
