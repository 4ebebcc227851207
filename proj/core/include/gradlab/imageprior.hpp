#pragma once

#include <cmath>

#include "gradlab/tensor.hpp"

namespace gradlab {

/// Anisotropic total variation of an [H,W,C] image: the sum of absolute
/// horizontal and vertical neighbour differences over all channels.
template <typename T>
T total_variation(const Tensor<T>& img) {
    if (img.rank() != 3) throw InvalidInput("total_variation expects an [H,W,C] image");
    int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    T tv = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < C; ++c) {
                T v = img[(y * W + x) * C + c];
                if (x + 1 < W) tv += std::abs(img[(y * W + x + 1) * C + c] - v);
                if (y + 1 < H) tv += std::abs(img[((y + 1) * W + x) * C + c] - v);
            }
    return tv;
}

/// Subgradient of total_variation (zero on ties).
template <typename T>
Tensor<T> total_variation_grad(const Tensor<T>& img) {
    if (img.rank() != 3) throw InvalidInput("total_variation expects an [H,W,C] image");
    int64_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    Tensor<T> g(img.shape);
    auto at = [&](int64_t y, int64_t x, int64_t c) -> int64_t { return (y * W + x) * C + c; };
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < C; ++c) {
                T v = img[at(y, x, c)];
                if (x + 1 < W) {
                    T d = img[at(y, x + 1, c)] - v;
                    T s = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
                    g[at(y, x + 1, c)] += s;
                    g[at(y, x, c)] -= s;
                }
                if (y + 1 < H) {
                    T d = img[at(y + 1, x, c)] - v;
                    T s = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
                    g[at(y + 1, x, c)] += s;
                    g[at(y, x, c)] -= s;
                }
            }
    return g;
}

}  // namespace gradlab
