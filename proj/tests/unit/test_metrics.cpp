#include "doctest.h"

#include "gradlab/metrics.hpp"
#include "gradlab/random.hpp"

using namespace gradlab;

namespace {

// Independent reference: direct (non-separable) 11x11 gaussian-weighted SSIM
// over valid windows, computed straight from the definition.
double reference_ssim(const Tensor<double>& a, const Tensor<double>& b) {
    const int r = 5;
    const double sigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double wsum = 0;
    double win[11][11];
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            win[dy + r][dx + r] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += win[dy + r][dx + r];
        }
    for (auto& row : win)
        for (auto& v : row) v /= wsum;

    int64_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
    double total = 0;
    for (int64_t c = 0; c < C; ++c) {
        double s = 0;
        int64_t count = 0;
        for (int64_t y = r; y < H - r; ++y)
            for (int64_t x = r; x < W - r; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        double wv = win[dy + r][dx + r];
                        double va = a[((y + dy) * W + (x + dx)) * C + c];
                        double vb = b[((y + dy) * W + (x + dx)) * C + c];
                        va = std::clamp(va, 0.0, 1.0);
                        vb = std::clamp(vb, 0.0, 1.0);
                        ma += wv * va;
                        mb += wv * vb;
                        saa += wv * va * va;
                        sbb += wv * vb * vb;
                        sab += wv * va * vb;
                    }
                double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                s += ((2 * ma * mb + C1) * (2 * cov + C2)) /
                     ((ma * ma + mb * mb + C1) * (va + vb + C2));
                ++count;
            }
        total += s / static_cast<double>(count);
    }
    return total / static_cast<double>(C);
}

}  // namespace

TEST_CASE("ssim matches an independent reference within 1e-6") {
    RandomStream rng(101);
    for (int pair = 0; pair < 10; ++pair) {
        int64_t H = 16 + static_cast<int64_t>(rng.below(17));
        int64_t W = 16 + static_cast<int64_t>(rng.below(17));
        int64_t C = 1 + static_cast<int64_t>(rng.below(3));
        Tensor<double> a = rng.uniform_tensor<double>({H, W, C}, -0.2, 1.2);
        Tensor<double> b = a;
        // mix of correlated and independent noise keeps SSIM in a useful range
        for (int64_t i = 0; i < b.size(); ++i) b[i] += 0.15 * rng.normal();
        CHECK(std::abs(metrics::ssim(a, b) - reference_ssim(a, b)) < 1e-6);

        Tensor<double> c = rng.uniform_tensor<double>({H, W, C}, 0.0, 1.0);
        CHECK(std::abs(metrics::ssim(a, c) - reference_ssim(a, c)) < 1e-6);
    }
}

TEST_CASE("psnr follows the definition and saturates at identity") {
    RandomStream rng(103);
    Tensor<double> a = rng.uniform_tensor<double>({12, 12, 3}, 0.0, 1.0);
    Tensor<double> b = a;
    for (int64_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] + 0.05 * rng.normal(), 0.0, 1.0);
    double m = 0;
    for (int64_t i = 0; i < a.size(); ++i) m += (a[i] - b[i]) * (a[i] - b[i]);
    m /= static_cast<double>(a.size());
    CHECK(metrics::psnr(a, b) == doctest::Approx(-10.0 * std::log10(m)).epsilon(1e-9));
    CHECK(std::isinf(metrics::psnr(a, a)));
    CHECK(metrics::psnr(a, a) > 0);
}

TEST_CASE("success ratio counts the threshold as a success") {
    CHECK(metrics::asr({0.6, 0.4, 0.5}) == doctest::Approx(66.6667).epsilon(1e-4));
    CHECK(metrics::asr({0.5}) == doctest::Approx(100.0));
    CHECK(metrics::asr({0.499999}) == doctest::Approx(0.0));
    CHECK(metrics::asr({0.2, 0.9}, 0.8) == doctest::Approx(50.0));
    CHECK_THROWS_AS(metrics::asr({}), InvalidInput);
}

TEST_CASE("metric report aggregates and ignores infinite psnr in the mean") {
    MetricReport r;
    r.ssim = {0.6, 0.4, 0.5};
    r.mse = {0.0, 0.01, 0.02};
    r.psnr = {std::numeric_limits<double>::infinity(), 20.0, 17.0};
    r.finalize();
    CHECK(r.ssim_mean == doctest::Approx(0.5));
    CHECK(r.ssim_std == doctest::Approx(std::sqrt(0.02 / 3.0)));
    CHECK(r.psnr_mean == doctest::Approx(18.5));
    CHECK(r.asr == doctest::Approx(66.6667).epsilon(1e-4));
}

TEST_CASE("images smaller than the window are rejected") {
    Tensor<double> a({8, 8, 1});
    CHECK_THROWS_AS(metrics::ssim(a, a), InvalidInput);
    Tensor<double> b({12, 12, 1}), c({12, 12, 3});
    CHECK_THROWS_AS(metrics::ssim(b, c), InvalidInput);
}
