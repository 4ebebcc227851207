#pragma once

#include <functional>

#include "gradlab/diffcore.hpp"

namespace testutil {

using namespace gradlab;

/// Central finite difference of a scalar function at one coordinate of t.
template <typename T>
double central_diff(const std::function<double(const Tensor<T>&)>& f, Tensor<T> t, int64_t i,
                    double h) {
    T orig = t[i];
    t[i] = orig + static_cast<T>(h);
    double hi = f(t);
    t[i] = orig - static_cast<T>(h);
    double lo = f(t);
    t[i] = orig;
    return (hi - lo) / (2 * h);
}

inline bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// Tiny CNN whose full forward/backward fits in microseconds: 12x12x2 input
/// (large enough for the 11x11 similarity window), 3x3 stride-2 convs with 3
/// and 4 channels, 3 classes.
inline ModelSpec tiny_cnn() {
    ModelSpec s = ModelSpec::cnn(12, 12, 2, 3);
    s.conv_channels = {3, 4};
    s.conv_kernel = 3;
    return s;
}

inline ModelSpec tiny_mlp() {
    ModelSpec s = ModelSpec::mlp(4, 4, 1, 3);
    s.mlp_layers = 3;
    s.mlp_width = 8;
    return s;
}

/// Loss of a model with one parameter array replaced, at frozen noise.
template <typename T>
double loss_with_param(const ModelState<T>& state, size_t pi, const Tensor<T>& value,
                       const Tensor<T>& x, int y, const std::vector<Tensor<T>>& eps) {
    ModelState<T> s = state;
    s.params[pi] = value;
    Tape<T> tape;
    int xn = tape.constant(x);
    std::vector<int> params;
    for (const auto& p : s.params) params.push_back(tape.constant(p));
    auto g = build_forward(tape, s, xn, params, std::vector<int>{y}, eps);
    return static_cast<double>(tape.val(g.loss)[0]);
}

}  // namespace testutil
