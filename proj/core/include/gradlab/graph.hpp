#pragma once

#include <algorithm>
#include <vector>

#include "gradlab/model_state.hpp"
#include "gradlab/random.hpp"
#include "gradlab/tape.hpp"

namespace gradlab {

/// Node handles produced by one forward construction.
template <typename T>
struct ForwardGraph {
    int input = -1;
    std::vector<int> param_nodes;
    int logits = -1;
    int prediction = -1;  // softmax probabilities [N, classes]
    int task_loss = -1;   // mean cross-entropy
    int loss = -1;        // task loss + sum(beta * KL)
    std::vector<std::pair<int, int>> latents;  // (insertion point P, node)
    std::vector<int> kl_nodes;                 // one per privacy module, spec order
};

/// Epsilon draws for the privacy modules of one forward pass, spec order.
/// Frozen draws make repeated evaluation bit-identical.
template <typename T>
std::vector<Tensor<T>> draw_module_noise(const ModelPlan& plan, int64_t batch, RandomStream& rng) {
    std::vector<std::pair<int, std::vector<int64_t>>> shapes;
    for (const auto& st : plan.stages) {
        if (st.kind == StagePlan::Kind::Precode)
            shapes.emplace_back(st.privacy_index,
                                std::vector<int64_t>{batch, st.module.bottleneck});
        else if (st.kind == StagePlan::Kind::Cvb)
            shapes.emplace_back(st.privacy_index,
                                std::vector<int64_t>{batch, st.in_shape[0], st.in_shape[1],
                                                     st.module.bottleneck});
    }
    std::sort(shapes.begin(), shapes.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Tensor<T>> eps;
    for (auto& [idx, shape] : shapes) eps.push_back(rng.normal_tensor<T>(std::move(shape)));
    return eps;
}

/// Builds the forward graph of a model on the given tape.
///
/// x_node carries a batch [N, ...input shape]. labels may be empty, in which
/// case no loss nodes are created. eps supplies one frozen draw per privacy
/// module (spec order); it is required whenever the model contains one.
template <typename T>
ForwardGraph<T> build_forward(Tape<T>& tape, const ModelState<T>& state, int x_node,
                              const std::vector<int>& param_nodes, const std::vector<int>& labels,
                              const std::vector<Tensor<T>>& eps) {
    const ModelPlan& plan = state.plan;
    ForwardGraph<T> g;
    g.input = x_node;
    g.param_nodes = param_nodes;

    int64_t N = tape.val(x_node).dim(0);
    int cur = x_node;

    for (const auto& st : plan.stages) {
        switch (st.kind) {
            case StagePlan::Kind::Conv: {
                cur = tape.conv2d(cur, param_nodes[static_cast<size_t>(st.params[0])], st.stride,
                                  st.pad);
                if (st.params.size() > 1)
                    cur = tape.bias_chan(cur, param_nodes[static_cast<size_t>(st.params[1])]);
                break;
            }
            case StagePlan::Kind::Dense:
            case StagePlan::Kind::Output: {
                cur = tape.matmul_nt(cur, param_nodes[static_cast<size_t>(st.params[0])]);
                if (st.params.size() > 1)
                    cur = tape.bias_rows(cur, param_nodes[static_cast<size_t>(st.params[1])]);
                break;
            }
            case StagePlan::Kind::BatchNorm: {
                // Normalization against fixed unit statistics (mean 0,
                // variance 1). Batch statistics would be degenerate for the
                // single-sample gradients exchanged here: a batch of one is
                // centered to zero, which erases the activation signal and
                // makes preceding bias gradients vanish identically.
                int xn = tape.scale(cur, 1.0 / std::sqrt(1.0 + 1e-5));
                int gamma = param_nodes[static_cast<size_t>(st.params[0])];
                int beta = param_nodes[static_cast<size_t>(st.params[1])];
                cur = tape.bias_rows(tape.mul(xn, tape.broadcast_rows(gamma, N)), beta);
                break;
            }
            case StagePlan::Kind::Relu: {
                cur = tape.relu(cur);
                if (st.insertion_point > 0) g.latents.emplace_back(st.insertion_point, cur);
                break;
            }
            case StagePlan::Kind::Flatten: {
                int64_t flat = 1;
                for (int64_t d : st.out_shape) flat *= d;
                cur = tape.reshape(cur, {N, flat});
                break;
            }
            case StagePlan::Kind::Precode: {
                if (st.privacy_index >= static_cast<int>(eps.size()))
                    throw InvalidInput("missing noise draw for privacy module");
                int64_t M = 1;
                for (int64_t d : st.in_shape) M *= d;
                int z = tape.reshape(cur, {N, M});
                int mu = tape.matmul_nt(z, param_nodes[static_cast<size_t>(st.params[0])]);
                int lv = tape.matmul_nt(z, param_nodes[static_cast<size_t>(st.params[1])]);
                int sigma = tape.exp(tape.scale(lv, 0.5));
                int e = tape.constant(eps[static_cast<size_t>(st.privacy_index)]);
                int b = tape.add(mu, tape.mul(sigma, e));
                int zhat = tape.matmul_nt(b, param_nodes[static_cast<size_t>(st.params[2])]);
                std::vector<int64_t> shape{N};
                shape.insert(shape.end(), st.out_shape.begin(), st.out_shape.end());
                cur = tape.reshape(zhat, std::move(shape));
                g.kl_nodes.push_back(kl_node(tape, mu, lv, N));
                break;
            }
            case StagePlan::Kind::Cvb: {
                if (st.privacy_index >= static_cast<int>(eps.size()))
                    throw InvalidInput("missing noise draw for privacy module");
                int mu = tape.conv2d(cur, param_nodes[static_cast<size_t>(st.params[0])], 1, st.pad);
                int lv = tape.conv2d(cur, param_nodes[static_cast<size_t>(st.params[1])], 1, st.pad);
                int sigma = tape.exp(tape.scale(lv, 0.5));
                int e = tape.constant(eps[static_cast<size_t>(st.privacy_index)]);
                int b = tape.add(mu, tape.mul(sigma, e));
                cur = tape.conv2d(b, param_nodes[static_cast<size_t>(st.params[2])], 1, 0);
                g.kl_nodes.push_back(kl_node(tape, mu, lv, N));
                break;
            }
        }
    }
    g.logits = cur;

    // Numerically stable softmax; the row maximum is piecewise constant and
    // enters as a gradient-free node.
    const Tensor<T>& lv = tape.val(g.logits);
    int64_t C = lv.dim(1);
    Tensor<T> rowmax({N});
    for (int64_t n = 0; n < N; ++n) {
        T m = lv[n * C];
        for (int64_t c = 1; c < C; ++c) m = std::max(m, lv[n * C + c]);
        rowmax[n] = m;
    }
    int shifted = tape.sub(g.logits, tape.broadcast_cols(tape.constant(std::move(rowmax)), C));
    int expd = tape.exp(shifted);
    int rowsum = tape.sum_cols(expd);
    g.prediction = tape.div(expd, tape.broadcast_cols(rowsum, C));

    if (!labels.empty()) {
        if (static_cast<int64_t>(labels.size()) != N) throw InvalidInput("label count != batch size");
        Tensor<T> onehot({N, C});
        for (int64_t n = 0; n < N; ++n) {
            int y = labels[static_cast<size_t>(n)];
            if (y < 0 || y >= C) throw InvalidInput("label out of range");
            onehot[n * C + y] = T(1);
        }
        int picked = tape.sum_cols(tape.mul(shifted, tape.constant(std::move(onehot))));
        int per_sample = tape.sub(tape.log(rowsum), picked);
        g.task_loss = tape.scale(tape.sum_all(per_sample), 1.0 / static_cast<double>(N));

        g.loss = g.task_loss;
        size_t ki = 0;
        for (const auto& st : plan.stages) {
            if (st.kind != StagePlan::Kind::Precode && st.kind != StagePlan::Kind::Cvb) continue;
            g.loss = tape.add(g.loss, tape.scale(g.kl_nodes[ki], st.module.beta));
            ++ki;
        }
    }
    return g;
}

/// KL(N(mu, sigma) || N(0, 1)) summed over latent entries, averaged over the
/// batch; built from the log-variance parameterization.
template <typename T>
int kl_node(Tape<T>& tape, int mu, int logvar, int64_t batch) {
    int t = tape.add(tape.mul(mu, mu), tape.exp(logvar));
    t = tape.sub(t, logvar);
    t = tape.add_scalar(t, -1.0);
    return tape.scale(tape.sum_all(t), 0.5 / static_cast<double>(batch));
}

}  // namespace gradlab
