#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "gradlab/tensor.hpp"

#include "json.hpp"

namespace gradlab {
namespace metrics {

template <typename T>
double clamp01(T v) {
    double d = static_cast<double>(v);
    return d < 0.0 ? 0.0 : (d > 1.0 ? 1.0 : d);
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw InvalidInput("mse: shape mismatch");
    double s = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = clamp01(a[i]) - clamp01(b[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

/// Peak signal-to-noise ratio in dB for images in [0, 1]; identical images
/// map to +infinity.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    double m = mse(a, b);
    if (m == 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(m);
}

namespace detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
    std::vector<double> w(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-(i * i) / (2 * sigma * sigma));
        w[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable gaussian filter over one channel plane, valid region only.
inline std::vector<double> filter_valid(const std::vector<double>& img, int64_t H, int64_t W,
                                        const std::vector<double>& win) {
    int64_t r = static_cast<int64_t>(win.size() / 2);
    int64_t OH = H - 2 * r, OW = W - 2 * r;
    std::vector<double> tmp(static_cast<size_t>(H * OW));
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < OW; ++x) {
            double s = 0;
            for (int64_t k = 0; k < static_cast<int64_t>(win.size()); ++k)
                s += win[static_cast<size_t>(k)] * img[static_cast<size_t>(y * W + x + k)];
            tmp[static_cast<size_t>(y * OW + x)] = s;
        }
    std::vector<double> out(static_cast<size_t>(OH * OW));
    for (int64_t y = 0; y < OH; ++y)
        for (int64_t x = 0; x < OW; ++x) {
            double s = 0;
            for (int64_t k = 0; k < static_cast<int64_t>(win.size()); ++k)
                s += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>((y + k) * OW + x)];
            out[static_cast<size_t>(y * OW + x)] = s;
        }
    return out;
}

}  // namespace detail

/// Structural similarity for [H,W,C] images in [0, 1]: 11x11 gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, valid-window positions, averaged per
/// channel and then across channels.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw InvalidInput("ssim: shape mismatch");
    if (a.rank() != 3) throw InvalidInput("ssim expects [H,W,C] images");
    int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
    const int radius = 5;
    if (H < 2 * radius + 1 || W < 2 * radius + 1)
        throw InvalidInput("ssim: image smaller than the 11x11 window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    auto win = detail::gaussian_window(radius, 1.5);

    double total = 0;
    for (int64_t c = 0; c < C; ++c) {
        std::vector<double> xa(static_cast<size_t>(H * W)), xb(xa.size()), xaa(xa.size()),
            xbb(xa.size()), xab(xa.size());
        for (int64_t i = 0; i < H * W; ++i) {
            double va = clamp01(a[i * C + c]);
            double vb = clamp01(b[i * C + c]);
            xa[static_cast<size_t>(i)] = va;
            xb[static_cast<size_t>(i)] = vb;
            xaa[static_cast<size_t>(i)] = va * va;
            xbb[static_cast<size_t>(i)] = vb * vb;
            xab[static_cast<size_t>(i)] = va * vb;
        }
        auto mu_a = detail::filter_valid(xa, H, W, win);
        auto mu_b = detail::filter_valid(xb, H, W, win);
        auto m_aa = detail::filter_valid(xaa, H, W, win);
        auto m_bb = detail::filter_valid(xbb, H, W, win);
        auto m_ab = detail::filter_valid(xab, H, W, win);
        double s = 0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            double va = m_aa[i] - mu_a[i] * mu_a[i];
            double vb = m_bb[i] - mu_b[i] * mu_b[i];
            double cov = m_ab[i] - mu_a[i] * mu_b[i];
            s += ((2 * mu_a[i] * mu_b[i] + C1) * (2 * cov + C2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
        }
        total += s / static_cast<double>(mu_a.size());
    }
    return total / static_cast<double>(C);
}

/// Attack success ratio: percentage of victims with SSIM >= threshold
/// (inclusive).
inline double asr(const std::vector<double>& ssim_values, double threshold = 0.5) {
    if (ssim_values.empty()) throw InvalidInput("asr: empty value list");
    int64_t hits = 0;
    for (double s : ssim_values)
        if (s >= threshold) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ssim_values.size());
}

}  // namespace metrics

/// Per-victim reconstruction quality plus aggregates.
struct MetricReport {
    std::vector<double> mse;
    std::vector<double> psnr;
    std::vector<double> ssim;
    double ssim_mean = 0, ssim_std = 0;
    double psnr_mean = 0;
    double mse_mean = 0;
    double asr = 0;

    void finalize() {
        if (ssim.empty()) throw InvalidInput("MetricReport: no victims");
        auto mean = [](const std::vector<double>& v) {
            double s = 0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        ssim_mean = mean(ssim);
        mse_mean = mean(mse);
        // +inf PSNR (perfect reconstruction) would poison the mean; report the
        // mean over finite values only.
        double ps = 0;
        int64_t pn = 0;
        for (double p : psnr)
            if (std::isfinite(p)) {
                ps += p;
                ++pn;
            }
        psnr_mean = pn > 0 ? ps / static_cast<double>(pn) : std::numeric_limits<double>::infinity();
        double var = 0;
        for (double s : ssim) var += (s - ssim_mean) * (s - ssim_mean);
        ssim_std = std::sqrt(var / static_cast<double>(ssim.size()));
        asr = metrics::asr(ssim);
    }
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    j = {{"mse", r.mse},           {"psnr", r.psnr},           {"ssim", r.ssim},
         {"ssim_mean", r.ssim_mean}, {"ssim_std", r.ssim_std}, {"psnr_mean", r.psnr_mean},
         {"mse_mean", r.mse_mean},   {"asr", r.asr}};
}

}  // namespace gradlab
