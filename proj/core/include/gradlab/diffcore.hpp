#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "gradlab/graph.hpp"
#include "gradlab/imageprior.hpp"

namespace gradlab {

/// Ordered per-layer, per-parameter gradients mirroring a model's layout.
template <typename T>
struct LayerGradients {
    struct Entry {
        std::string layer;
        std::string kind;
        int group = 0;
        Tensor<T> grad;
    };
    std::vector<Entry> entries;

    bool same_layout(const LayerGradients& o) const {
        if (entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].layer != o.entries[i].layer || entries[i].kind != o.entries[i].kind ||
                entries[i].grad.shape != o.entries[i].grad.shape)
                return false;
        }
        return true;
    }

    const Entry& find(const std::string& layer, const std::string& kind) const {
        for (const auto& e : entries)
            if (e.layer == layer && e.kind == kind) return e;
        throw InvalidInput("no gradient entry for " + layer + "/" + kind);
    }

    template <typename U>
    LayerGradients<U> cast() const {
        LayerGradients<U> out;
        for (const auto& e : entries)
            out.entries.push_back({e.layer, e.kind, e.group, e.grad.template cast<U>()});
        return out;
    }
};

enum class DistanceKind { Euclidean, Cosine };

namespace detail {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& x) {
    std::vector<int64_t> s{1};
    s.insert(s.end(), x.shape.begin(), x.shape.end());
    return x.reshaped(std::move(s));
}

template <typename T>
void check_input_shape(const ModelState<T>& state, const Tensor<T>& batch) {
    if (batch.rank() != 4 || batch.dim(1) != state.spec.input_h ||
        batch.dim(2) != state.spec.input_w || batch.dim(3) != state.spec.input_c)
        throw InvalidInput("input shape does not match model input");
}

template <typename T>
std::vector<int> param_leaves(Tape<T>& tape, const ModelState<T>& state) {
    std::vector<int> ids;
    ids.reserve(state.params.size());
    for (const auto& p : state.params) ids.push_back(tape.leaf(p));
    return ids;
}

template <typename T>
LayerGradients<T> collect_gradients(Tape<T>& tape, const ModelState<T>& state,
                                    const std::vector<int>& param_nodes,
                                    const std::vector<int>& grad_ids) {
    LayerGradients<T> out;
    for (size_t i = 0; i < state.params.size(); ++i) {
        const ParamDesc& d = state.plan.params[i];
        Tensor<T> g = tape.grad_value(param_nodes[i], grad_ids[i]);
        if (!g.all_finite()) throw NumericalFailure("non-finite parameter gradient");
        out.entries.push_back({d.layer, d.kind, d.group, std::move(g)});
    }
    return out;
}

}  // namespace detail

template <typename T>
struct ForwardResult {
    Tensor<T> prediction;                      // softmax probabilities
    std::map<int, Tensor<T>> latents;          // insertion point P -> activation
};

/// Forward pass on a single input [H,W,C] or batch [N,H,W,C].
template <typename T>
ForwardResult<T> forward_eval(const ModelState<T>& state, const Tensor<T>& x, RandomStream& rng) {
    Tensor<T> batch = x.rank() == 3 ? detail::as_batch(x) : x;
    detail::check_input_shape(state, batch);
    Tape<T> tape;
    int xn = tape.constant(batch);
    std::vector<int> params = detail::param_leaves(tape, state);
    auto eps = draw_module_noise<T>(state.plan, batch.dim(0), rng);
    auto g = build_forward(tape, state, xn, params, {}, eps);
    ForwardResult<T> r;
    r.prediction = tape.val(g.prediction);
    if (x.rank() == 3) r.prediction = r.prediction.reshaped({r.prediction.dim(1)});
    if (!r.prediction.all_finite()) throw NumericalFailure("non-finite activation in forward pass");
    for (auto& [p, node] : g.latents) r.latents[p] = tape.val(node);
    return r;
}

/// Loss and parameter gradients for a batch (cross-entropy, extended by the
/// weighted KL terms when variational modules are present).
template <typename T>
std::pair<T, LayerGradients<T>> param_gradients_batch(const ModelState<T>& state,
                                                      const Tensor<T>& xs,
                                                      const std::vector<int>& ys,
                                                      RandomStream& rng) {
    detail::check_input_shape(state, xs);
    Tape<T> tape;
    int xn = tape.constant(xs);
    std::vector<int> params = detail::param_leaves(tape, state);
    auto eps = draw_module_noise<T>(state.plan, xs.dim(0), rng);
    auto g = build_forward(tape, state, xn, params, ys, eps);
    T loss = tape.val(g.loss)[0];
    if (!std::isfinite(static_cast<double>(loss))) throw NumericalFailure("non-finite loss");
    auto grad_ids = tape.gradients(g.loss, params);
    return {loss, detail::collect_gradients(tape, state, params, grad_ids)};
}

template <typename T>
std::pair<T, LayerGradients<T>> param_gradients(const ModelState<T>& state, const Tensor<T>& x,
                                                int y, RandomStream& rng) {
    return param_gradients_batch(state, detail::as_batch(x), std::vector<int>{y}, rng);
}

struct RegWeights {
    double lambda_tv = 0.0;
    double cpl_weight = 0.0;
};

template <typename T>
struct AttackGradient {
    T loss = 0;                 // masked distance + regularizers
    T distance = 0;             // masked distance alone
    Tensor<T> grad;             // d loss / d x_dummy (without the TV term)
    LayerGradients<T> dummy_grads;  // full dummy gradient G' of this evaluation
};

/// Inner derivative of the reconstruction objective: differentiates the masked
/// distance (plus regularizers) between the dummy parameter gradient and the
/// target gradient with respect to the dummy input. Draws must be frozen by
/// the caller so that repeated evaluation is bit-identical. The
/// total-variation prior enters as a direct function of the image and is added
/// analytically.
template <typename T>
AttackGradient<T> attack_input_gradient(const ModelState<T>& state, const Tensor<T>& x_dummy,
                                        int y, const LayerGradients<T>& target,
                                        const std::vector<bool>& mask, DistanceKind kind,
                                        const RegWeights& reg, const std::vector<Tensor<T>>& eps) {
    if (mask.size() != state.plan.groups.size())
        throw InvalidMask("mask size does not match layer-group count");
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
        throw InvalidMask("mask selects no layers");
    if (target.entries.size() != state.params.size())
        throw InvalidInput("target gradient layout does not match model");

    Tensor<T> batch = detail::as_batch(x_dummy);
    detail::check_input_shape(state, batch);
    Tape<T> tape;
    int xn = tape.leaf(batch);
    std::vector<int> params = detail::param_leaves(tape, state);
    auto g = build_forward(tape, state, xn, params, std::vector<int>{y}, eps);
    auto grad_ids = tape.gradients(g.loss, params);

    // Materialize any identically-zero gradients so masking sees all entries.
    std::vector<int> gnodes(grad_ids.size());
    for (size_t i = 0; i < grad_ids.size(); ++i)
        gnodes[i] = grad_ids[i] >= 0 ? grad_ids[i]
                                     : tape.constant(Tensor<T>(state.plan.params[i].shape));

    int distance = -1;
    if (kind == DistanceKind::Euclidean) {
        for (size_t i = 0; i < gnodes.size(); ++i) {
            if (!mask[static_cast<size_t>(state.plan.params[i].group)]) continue;
            int d = tape.sub(gnodes[i], tape.constant(target.entries[i].grad));
            int s = tape.sum_all(tape.mul(d, d));
            distance = distance < 0 ? s : tape.add(distance, s);
        }
    } else {
        // One cosine over the concatenation of all masked layers.
        int dotn = -1, sqn = -1;
        double target_sq = 0;
        for (size_t i = 0; i < gnodes.size(); ++i) {
            if (!mask[static_cast<size_t>(state.plan.params[i].group)]) continue;
            int tgt = tape.constant(target.entries[i].grad);
            int d = tape.sum_all(tape.mul(gnodes[i], tgt));
            int s = tape.sum_all(tape.mul(gnodes[i], gnodes[i]));
            dotn = dotn < 0 ? d : tape.add(dotn, d);
            sqn = sqn < 0 ? s : tape.add(sqn, s);
            target_sq += static_cast<double>(squared_norm(target.entries[i].grad));
        }
        double target_norm = std::sqrt(target_sq);
        if (target_norm == 0) throw DegenerateGradient("target gradient has zero norm");
        T dummy_sq = tape.val(sqn)[0];
        if (dummy_sq == T(0)) throw DegenerateGradient("dummy gradient has zero norm");
        int cosine = tape.div(dotn, tape.scale(tape.sqrt(sqn), target_norm));
        distance = tape.sub(tape.constant(Tensor<T>::scalar(T(1))), cosine);
    }

    int total = distance;
    if (reg.cpl_weight > 0) {
        int64_t C = tape.val(g.prediction).dim(1);
        Tensor<T> onehot({int64_t(1), C});
        onehot[y] = T(1);
        int d = tape.sub(g.prediction, tape.constant(std::move(onehot)));
        total = tape.add(total, tape.scale(tape.sum_all(tape.mul(d, d)), reg.cpl_weight));
    }

    auto xgrad = tape.gradients(total, {xn});
    AttackGradient<T> out;
    out.loss = tape.val(total)[0];
    out.distance = tape.val(distance)[0];
    out.grad = tape.grad_value(xn, xgrad[0]);
    std::vector<int64_t> img_shape{state.spec.input_h, state.spec.input_w, state.spec.input_c};
    out.grad = out.grad.reshaped(img_shape);
    if (reg.lambda_tv > 0) {
        Tensor<T> img = batch.reshaped(img_shape);
        // per-pixel normalization: the raw variation grows with image area
        // while the distance term is bounded, so an unnormalized prior
        // flattens the dummy instead of regularizing it
        double w = reg.lambda_tv / static_cast<double>(img.size());
        out.loss += static_cast<T>(w * static_cast<double>(total_variation(img)));
        Tensor<T> tvg = total_variation_grad(img);
        for (int64_t i = 0; i < out.grad.size(); ++i)
            out.grad[i] += static_cast<T>(w) * tvg[i];
    }
    if (x_dummy.rank() == 4) out.grad = out.grad.reshaped(x_dummy.shape);
    if (!out.grad.all_finite() || !std::isfinite(static_cast<double>(out.loss)))
        throw NumericalFailure("non-finite attack gradient");
    for (size_t i = 0; i < gnodes.size(); ++i) {
        const ParamDesc& d = state.plan.params[i];
        out.dummy_grads.entries.push_back({d.layer, d.kind, d.group, tape.val(gnodes[i])});
    }
    return out;
}

}  // namespace gradlab
