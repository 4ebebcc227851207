#include "doctest.h"

#include "gradlab/graph.hpp"
#include "gradlab/privacy.hpp"
#include "helpers.hpp"

using namespace gradlab;
using namespace testutil;

TEST_CASE("fully connected bottleneck is shape preserving and reparameterized") {
    RandomStream rng(3);
    int64_t M = 12, K = 4;
    VbParams<double> p{rng.normal_tensor<double>({K, M}), rng.normal_tensor<double>({K, M}),
                       rng.normal_tensor<double>({M, K})};
    Tensor<double> z = rng.normal_tensor<double>({M});
    Tensor<double> eps = rng.normal_tensor<double>({K});

    auto [zhat, stats] = vb_forward(z, p, eps);
    CHECK(zhat.shape == z.shape);
    CHECK(stats.mu.shape == std::vector<int64_t>{K});
    CHECK(stats.logvar.shape == std::vector<int64_t>{K});

    // identical eps -> identical output; different eps -> different output
    auto [zhat2, stats2] = vb_forward(z, p, eps);
    for (int64_t i = 0; i < M; ++i) CHECK(zhat[i] == zhat2[i]);
    Tensor<double> eps3 = rng.normal_tensor<double>({K});
    auto [zhat3, stats3] = vb_forward(z, p, eps3);
    double diff = 0;
    for (int64_t i = 0; i < M; ++i) diff += std::abs(zhat[i] - zhat3[i]);
    CHECK(diff > 1e-9);

    // the sample equals mu + sigma * eps in the latent space
    Tensor<double> sigma = stats.sigma();
    for (int64_t k = 0; k < K; ++k) CHECK(sigma[k] > 0);
}

TEST_CASE("convolutional bottleneck preserves the feature map shape") {
    RandomStream rng(5);
    int64_t h = 7, w = 6, c = 4;
    int k = 3, KE = 2;
    CvbParams<double> p{rng.normal_tensor<double>({k, k, c, KE}),
                        rng.normal_tensor<double>({k, k, c, KE}),
                        rng.normal_tensor<double>({1, 1, KE, c})};
    Tensor<double> z = rng.normal_tensor<double>({h, w, c});
    Tensor<double> eps = rng.normal_tensor<double>({h, w, KE});

    auto [zhat, stats] = cvb_forward(z, p, eps);
    CHECK(zhat.shape == z.shape);
    CHECK(stats.mu.shape == std::vector<int64_t>{h, w, KE});

    // stochastic across draws, frozen within one
    auto [zhat2, s2] = cvb_forward(z, p, eps);
    for (int64_t i = 0; i < zhat.size(); ++i) CHECK(zhat[i] == zhat2[i]);
    RandomStream r2(77);
    auto [zhat3, s3] = cvb_forward(z, p, r2);
    double diff = 0;
    for (int64_t i = 0; i < zhat.size(); ++i) diff += std::abs(zhat[i] - zhat3[i]);
    CHECK(diff > 1e-9);

    // eps shape is validated
    CHECK_THROWS_AS(cvb_forward(z, p, rng.normal_tensor<double>({h, w, KE + 1})), InvalidInput);
}

TEST_CASE("repeated noise draws change the latent sample variance") {
    // With sigma > 0 the bottleneck output for a fixed input is itself random;
    // its empirical variance across draws must be positive.
    RandomStream rng(9);
    int64_t M = 6, K = 3;
    VbParams<double> p{rng.normal_tensor<double>({K, M}), rng.normal_tensor<double>({K, M}),
                       rng.normal_tensor<double>({M, K})};
    Tensor<double> z = rng.normal_tensor<double>({M});
    RandomStream draws(21);
    std::vector<double> first;
    for (int i = 0; i < 64; ++i) {
        auto [zhat, stats] = vb_forward(z, p, draws);
        first.push_back(zhat[0]);
    }
    double mean = 0;
    for (double v : first) mean += v;
    mean /= static_cast<double>(first.size());
    double var = 0;
    for (double v : first) var += (v - mean) * (v - mean);
    var /= static_cast<double>(first.size());
    CHECK(var > 1e-8);
}

TEST_CASE("KL loss is zero at the prior and positive elsewhere") {
    LatentStats<double> at_prior{Tensor<double>({4}), Tensor<double>({4})};
    CHECK(kl_loss(at_prior) == doctest::Approx(0.0));

    RandomStream rng(31);
    LatentStats<double> off{rng.normal_tensor<double>({4}), rng.normal_tensor<double>({4})};
    CHECK(kl_loss(off) > 0);

    // hand-checked value: mu = 1, logvar = 0 for one entry -> 1/2
    LatentStats<double> one{Tensor<double>::full({1}, 1.0), Tensor<double>({1})};
    CHECK(kl_loss(one) == doctest::Approx(0.5));

    CHECK(extended_loss(2.0, 3.0, 0.1) == doctest::Approx(2.3));
    CHECK_THROWS_AS(extended_loss(1.0, -0.5, 0.1), InvalidInput);
}

TEST_CASE("KL node gradients match finite differences") {
    RandomStream rng(37);
    int64_t N = 2, K = 5;
    Tensor<double> mu = rng.normal_tensor<double>({N, K});
    Tensor<double> lv = rng.normal_tensor<double>({N, K});

    auto value = [&](const Tensor<double>& muv, const Tensor<double>& lvv) {
        Tape<double> t;
        return static_cast<double>(t.val(kl_node(t, t.constant(muv), t.constant(lvv), N))[0]);
    };

    Tape<double> t;
    int mun = t.leaf(mu);
    int lvn = t.leaf(lv);
    int kl = kl_node(t, mun, lvn, N);
    auto g = t.gradients(kl, {mun, lvn});
    Tensor<double> gmu = t.grad_value(mun, g[0]);
    Tensor<double> glv = t.grad_value(lvn, g[1]);

    for (int64_t i = 0; i < mu.size(); ++i) {
        double fd_mu = central_diff<double>(
            [&](const Tensor<double>& v) { return value(v, lv); }, mu, i, 1e-6);
        double fd_lv = central_diff<double>(
            [&](const Tensor<double>& v) { return value(mu, v); }, lv, i, 1e-6);
        CHECK(close_rel(gmu[i], fd_mu, 1e-4));
        CHECK(close_rel(glv[i], fd_lv, 1e-4));
    }

    // closed form: dKL/dmu = mu / N, dKL/dlogvar = (exp(lv) - 1) / (2N)
    for (int64_t i = 0; i < mu.size(); ++i) {
        CHECK(close_rel(gmu[i], mu[i] / static_cast<double>(N), 1e-9));
        CHECK(close_rel(glv[i], (std::exp(lv[i]) - 1.0) / (2.0 * static_cast<double>(N)), 1e-9));
    }
}

TEST_CASE("extended model loss equals task loss plus weighted KL") {
    ModelSpec spec = tiny_cnn();
    PrivacyModuleSpec m;
    m.kind = PrivacyKind::PRECODE;
    m.position = 1;
    m.bottleneck = 3;
    m.beta = 0.25;
    spec.privacy.push_back(m);
    auto state = build_model<double>(spec, 51);

    RandomStream rng(52);
    Tensor<double> x = rng.uniform_tensor<double>({1, spec.input_h, spec.input_w, spec.input_c},
                                                  0.0, 1.0);
    RandomStream nrng(53);
    auto eps = draw_module_noise<double>(state.plan, 1, nrng);

    Tape<double> t;
    int xn = t.constant(x);
    std::vector<int> params;
    for (const auto& p : state.params) params.push_back(t.constant(p));
    auto g = build_forward(t, state, xn, params, std::vector<int>{0}, eps);
    REQUIRE(g.kl_nodes.size() == 1);
    double task = t.val(g.task_loss)[0];
    double kl = t.val(g.kl_nodes[0])[0];
    double total = t.val(g.loss)[0];
    CHECK(kl >= 0);
    CHECK(total == doctest::Approx(task + 0.25 * kl));
}
