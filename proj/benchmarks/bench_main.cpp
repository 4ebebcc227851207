#include <benchmark/benchmark.h>

#include "gradlab/attacks.hpp"
#include "gradlab/datasets.hpp"
#include "gradlab/metrics.hpp"

using namespace gradlab;

namespace {

static void BM_ConvForward(benchmark::State& state) {
    ModelSpec spec = ModelSpec::cnn();
    auto model = build_model<float>(spec, 1);
    RandomStream rng(2);
    Tensor<float> x = rng.uniform_tensor<float>({32, 32, 3}, 0.0, 1.0);
    for (auto _ : state) {
        RandomStream r(3);
        auto out = forward_eval(model, x, r);
        benchmark::DoNotOptimize(out.prediction.data.data());
    }
}
BENCHMARK(BM_ConvForward);

static void BM_ParamGradients(benchmark::State& state) {
    ModelSpec spec = ModelSpec::cnn();
    auto model = build_model<float>(spec, 1);
    RandomStream rng(2);
    Tensor<float> x = rng.uniform_tensor<float>({32, 32, 3}, 0.0, 1.0);
    for (auto _ : state) {
        RandomStream r(3);
        auto [loss, grads] = param_gradients(model, x, 4, r);
        benchmark::DoNotOptimize(loss);
        benchmark::DoNotOptimize(grads.entries.data());
    }
}
BENCHMARK(BM_ParamGradients);

static void BM_AttackStep(benchmark::State& state) {
    ModelSpec spec = ModelSpec::cnn();
    auto model = build_model<float>(spec, 1);
    RandomStream rng(2);
    Tensor<float> victim = rng.uniform_tensor<float>({32, 32, 3}, 0.0, 1.0);
    auto [vl, target] = param_gradients(model, victim, 4, rng);
    benchmark::DoNotOptimize(vl);
    Tensor<float> dummy = rng.normal_tensor<float>({32, 32, 3});
    std::vector<bool> mask(model.plan.groups.size(), true);
    RegWeights reg;
    reg.lambda_tv = 0.01;
    std::vector<Tensor<float>> eps;
    for (auto _ : state) {
        auto g = attack_input_gradient(model, dummy, 4, target, mask, DistanceKind::Cosine, reg,
                                       eps);
        benchmark::DoNotOptimize(g.grad.data.data());
    }
}
BENCHMARK(BM_AttackStep);

static void BM_Ssim(benchmark::State& state) {
    RandomStream rng(5);
    Tensor<double> a = rng.uniform_tensor<double>({32, 32, 3}, 0.0, 1.0);
    Tensor<double> b = rng.uniform_tensor<double>({32, 32, 3}, 0.0, 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim);

}  // namespace

BENCHMARK_MAIN();
