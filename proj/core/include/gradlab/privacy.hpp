#pragma once

#include "gradlab/random.hpp"
#include "gradlab/tape.hpp"

namespace gradlab {

/// Latent distribution emitted by a variational encoder. The encoder output is
/// parameterized as log-variance, so sigma = exp(logvar / 2) is always
/// positive.
template <typename T>
struct LatentStats {
    Tensor<T> mu;
    Tensor<T> logvar;

    Tensor<T> sigma() const {
        Tensor<T> s = logvar;
        for (auto& v : s.data) v = std::exp(v / 2);
        return s;
    }
};

template <typename T>
struct VbParams {
    Tensor<T> weight_mu;      // [K, M]
    Tensor<T> weight_logvar;  // [K, M]
    Tensor<T> weight_dec;     // [M, K]
};

template <typename T>
struct CvbParams {
    Tensor<T> kernel_mu;      // [k, k, c, K_E]
    Tensor<T> kernel_logvar;  // [k, k, c, K_E]
    Tensor<T> kernel_dec;     // [1, 1, K_E, c]
};

/// Fully connected variational bottleneck: encode a flat representation into
/// a latent Gaussian, sample b = mu + sigma * eps, decode back to the input
/// width.
template <typename T>
std::pair<Tensor<T>, LatentStats<T>> vb_forward(const Tensor<T>& z, const VbParams<T>& params,
                                                const Tensor<T>& eps) {
    if (z.rank() != 1 || z.dim(0) != params.weight_mu.dim(1))
        throw InvalidInput("vb_forward: input width does not match encoder");
    int64_t K = params.weight_mu.dim(0);
    if (eps.size() != K) throw InvalidInput("vb_forward: eps width does not match bottleneck");
    Tape<T> tape;
    int zn = tape.constant(z.reshaped({1, z.dim(0)}));
    int mu = tape.matmul_nt(zn, tape.constant(params.weight_mu));
    int lv = tape.matmul_nt(zn, tape.constant(params.weight_logvar));
    int sigma = tape.exp(tape.scale(lv, 0.5));
    int b = tape.add(mu, tape.mul(sigma, tape.constant(eps.reshaped({1, K}))));
    int zhat = tape.matmul_nt(b, tape.constant(params.weight_dec));
    LatentStats<T> stats{tape.val(mu).reshaped({K}), tape.val(lv).reshaped({K})};
    return {tape.val(zhat).reshaped({z.dim(0)}), std::move(stats)};
}

template <typename T>
std::pair<Tensor<T>, LatentStats<T>> vb_forward(const Tensor<T>& z, const VbParams<T>& params,
                                                RandomStream& rng) {
    return vb_forward(z, params, rng.normal_tensor<T>({params.weight_mu.dim(0)}));
}

/// Convolutional variational bottleneck: stride-1 zero-padded encoder
/// convolutions produce mean and log-variance maps, the 1x1 decoder restores
/// the input channel count, so shape(zhat) == shape(z).
template <typename T>
std::pair<Tensor<T>, LatentStats<T>> cvb_forward(const Tensor<T>& z, const CvbParams<T>& params,
                                                 const Tensor<T>& eps) {
    if (z.rank() != 3 || z.dim(2) != params.kernel_mu.dim(2))
        throw InvalidInput("cvb_forward: feature map channels do not match encoder");
    int64_t k = params.kernel_mu.dim(0);
    if (k > z.dim(0) || k > z.dim(1)) throw InvalidSpec("cvb_forward: kernel exceeds feature map");
    int64_t KE = params.kernel_mu.dim(3);
    std::vector<int64_t> stat_shape{z.dim(0), z.dim(1), KE};
    if (eps.shape != stat_shape) throw InvalidInput("cvb_forward: eps shape mismatch");
    int pad = static_cast<int>((k - 1) / 2);
    Tape<T> tape;
    int zn = tape.constant(z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)}));
    int mu = tape.conv2d(zn, tape.constant(params.kernel_mu), 1, pad);
    int lv = tape.conv2d(zn, tape.constant(params.kernel_logvar), 1, pad);
    int sigma = tape.exp(tape.scale(lv, 0.5));
    int b = tape.add(mu, tape.mul(sigma, tape.constant(eps.reshaped(
                                              {1, stat_shape[0], stat_shape[1], stat_shape[2]}))));
    int zhat = tape.conv2d(b, tape.constant(params.kernel_dec), 1, 0);
    LatentStats<T> stats{tape.val(mu).reshaped(stat_shape), tape.val(lv).reshaped(stat_shape)};
    return {tape.val(zhat).reshaped(z.shape), std::move(stats)};
}

template <typename T>
std::pair<Tensor<T>, LatentStats<T>> cvb_forward(const Tensor<T>& z, const CvbParams<T>& params,
                                                 RandomStream& rng) {
    return cvb_forward(
        z, params, rng.normal_tensor<T>({z.dim(0), z.dim(1), params.kernel_mu.dim(3)}));
}

/// KL(N(mu, sigma) || N(0, 1)) summed over latent entries.
template <typename T>
T kl_loss(const LatentStats<T>& stats) {
    if (!stats.mu.same_shape(stats.logvar)) throw InvalidInput("kl_loss: mu/logvar shape mismatch");
    T kl = 0;
    for (int64_t i = 0; i < stats.mu.size(); ++i) {
        T m = stats.mu[i], lv = stats.logvar[i];
        kl += m * m + std::exp(lv) - lv - T(1);
    }
    kl /= 2;
    if (!std::isfinite(static_cast<double>(kl))) throw NumericalFailure("non-finite KL");
    return kl;
}

template <typename T>
T extended_loss(T task_loss, T kl, double beta) {
    if (kl < 0) throw InvalidInput("extended_loss: negative KL");
    return task_loss + static_cast<T>(beta) * kl;
}

}  // namespace gradlab
