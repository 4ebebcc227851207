#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gradlab/defenses.hpp"
#include "gradlab/diffcore.hpp"
#include "gradlab/imageprior.hpp"
#include "gradlab/metrics.hpp"

#include "json.hpp"

namespace gradlab {

enum class AttackKind { Idlg, Cpl, Ig, Ignore };
enum class LabelMode { Known, Recovered };
enum class StopReason { LossFloor, Stagnation, MaxIters };

struct TrackedEntry {
    std::string layer;
    std::string kind;
    int64_t index = 0;
};

struct AttackSpec {
    AttackKind kind = AttackKind::Ig;
    DistanceKind distance = DistanceKind::Cosine;
    double lambda_tv = 0.01;
    double cpl_label_weight = 0.0;
    LabelMode label_mode = LabelMode::Known;
    std::vector<bool> layer_mask;  // empty = all layers (Ignore derives its own)

    double lr = 1.0;
    double lr_decay = 0.1;
    int plateau_iters = 400;

    double loss_floor = 1e-5;
    int stagnation_iters = 4000;
    int max_iters = 20000;

    uint64_t seed = 0;
    bool record_trajectory = false;
    std::vector<TrackedEntry> track;

    static AttackSpec idlg() {
        AttackSpec s;
        s.kind = AttackKind::Idlg;
        s.distance = DistanceKind::Euclidean;
        s.lambda_tv = 0.0;
        return s;
    }
    static AttackSpec cpl() {
        AttackSpec s;
        s.kind = AttackKind::Cpl;
        s.distance = DistanceKind::Euclidean;
        s.lambda_tv = 0.0;
        s.cpl_label_weight = 1.0;
        return s;
    }
    static AttackSpec ig() { return AttackSpec{}; }
    static AttackSpec ignore() {
        AttackSpec s;
        s.kind = AttackKind::Ignore;
        // The masked objective is stochastic: the bottleneck resamples its
        // noise every iteration, so the distance term fluctuates. A stronger
        // image prior (it is the only deterministic part of the objective)
        // and a smaller step size make the optimization average the noise
        // out instead of chasing individual draws.
        s.lambda_tv = 1.0;
        s.lr = 0.1;
        return s;
    }
};

struct TrajectoryRecord {
    std::vector<std::string> layers;                   // group names
    std::vector<std::vector<double>> cosine;           // [iteration][group]
    std::vector<TrackedEntry> tracked;
    std::vector<std::vector<double>> tracked_values;   // [iteration][entry]
};

template <typename T>
struct AttackResult {
    Tensor<T> reconstruction;
    double final_loss = 0;
    int iterations = 0;
    StopReason stop = StopReason::MaxIters;
    double mse = 0, psnr = 0, ssim = 0;  // filled when the victim is known
    std::optional<TrajectoryRecord> trajectory;
    int label_used = -1;
};

/// Gaussian-initialized dummy image.
template <typename T>
Tensor<T> init_dummy(std::vector<int64_t> shape, uint64_t seed) {
    RandomStream rng(seed);
    return rng.normal_tensor<T>(std::move(shape));
}

/// Masked distance between two gradient sets; euclidean is the sum of squared
/// differences, cosine is one cosine over the concatenation of masked layers.
template <typename T>
double gradient_distance(const LayerGradients<T>& a, const LayerGradients<T>& b,
                         const std::vector<bool>& mask, DistanceKind kind) {
    if (!a.same_layout(b)) throw InvalidInput("gradient_distance: layout mismatch");
    bool any = false;
    double acc = 0, dot_ab = 0, sq_a = 0, sq_b = 0;
    for (size_t i = 0; i < a.entries.size(); ++i) {
        if (!mask.empty() && !mask[static_cast<size_t>(a.entries[i].group)]) continue;
        any = true;
        const auto& ga = a.entries[i].grad;
        const auto& gb = b.entries[i].grad;
        for (int64_t j = 0; j < ga.size(); ++j) {
            double va = static_cast<double>(ga[j]), vb = static_cast<double>(gb[j]);
            acc += (va - vb) * (va - vb);
            dot_ab += va * vb;
            sq_a += va * va;
            sq_b += vb * vb;
        }
    }
    if (!any) throw InvalidMask("gradient_distance: mask selects no layers");
    if (kind == DistanceKind::Euclidean) return acc;
    if (sq_a == 0 || sq_b == 0) throw DegenerateGradient("zero-norm gradient under cosine distance");
    return 1.0 - dot_ab / (std::sqrt(sq_a) * std::sqrt(sq_b));
}

/// Squared Euclidean distance between a probability vector and the one-hot
/// target, the CPL label regularizer.
template <typename T>
double cpl_label_term(const Tensor<T>& prediction, int label) {
    if (prediction.rank() != 1) throw InvalidInput("cpl_label_term expects a probability vector");
    if (label < 0 || label >= prediction.dim(0)) throw InvalidInput("label out of range");
    double s = 0;
    for (int64_t i = 0; i < prediction.size(); ++i) {
        double d = static_cast<double>(prediction[i]) - (i == label ? 1.0 : 0.0);
        s += d * d;
    }
    return s;
}

/// iDLG label rule for a single-sample softmax cross-entropy gradient: the
/// classifier weight-gradient row of the true class is the only one with a
/// negative sum (p_i - 1 < 0 only for i = y, and the layer inputs are
/// non-negative).
template <typename T>
int recover_label(const Tensor<T>& classifier_weight_grad) {
    if (classifier_weight_grad.rank() != 2)
        throw InvalidInput("recover_label expects the classifier weight-gradient matrix");
    int64_t C = classifier_weight_grad.dim(0), M = classifier_weight_grad.dim(1);
    int found = -1;
    for (int64_t c = 0; c < C; ++c) {
        double s = 0;
        for (int64_t m = 0; m < M; ++m) s += static_cast<double>(classifier_weight_grad[c * M + m]);
        if (s < 0) {
            if (found >= 0) throw AmbiguousLabel("multiple negative-sum rows");
            found = static_cast<int>(c);
        }
    }
    if (found < 0) throw AmbiguousLabel("no negative-sum row");
    return found;
}

/// Mask for the stochastic-gradient-ignoring attack: keep every layer up to
/// and including the first variational encoder, drop the decoder and all
/// subsequent layers.
inline std::vector<bool> ignore_mask(const ModelPlan& plan) {
    size_t dec = plan.groups.size();
    for (size_t i = 0; i < plan.groups.size(); ++i) {
        if (plan.groups[i].size() > 4 &&
            plan.groups[i].compare(plan.groups[i].size() - 4, 4, ".dec") == 0) {
            dec = i;
            break;
        }
    }
    if (dec == plan.groups.size())
        throw InvalidSpec("ignore attack requires a model with a variational bottleneck");
    std::vector<bool> mask(plan.groups.size(), false);
    for (size_t i = 0; i < dec; ++i) mask[i] = true;
    return mask;
}

inline std::vector<bool> ignore_mask(const ModelSpec& spec) { return ignore_mask(plan_model(spec)); }

/// Analytical reconstruction of a fully connected layer's input from its
/// weight and bias gradients: x = dW_row(i) / db(i) for the largest-magnitude
/// nonzero bias-gradient entry.
template <typename T>
Tensor<T> analytic_fc_input(const Tensor<T>& weight_grad, const Tensor<T>& bias_grad) {
    if (weight_grad.rank() != 2 || bias_grad.rank() != 1 ||
        weight_grad.dim(0) != bias_grad.dim(0))
        throw InvalidInput("analytic_fc_input: gradient shapes do not match");
    int64_t best = -1;
    T best_mag = 0;
    for (int64_t i = 0; i < bias_grad.size(); ++i) {
        T mag = std::abs(bias_grad[i]);
        if (mag > best_mag) {
            best_mag = mag;
            best = i;
        }
    }
    if (best < 0) throw NoUsableRow("bias gradient is identically zero");
    int64_t M = weight_grad.dim(1);
    Tensor<T> x({M});
    for (int64_t m = 0; m < M; ++m) x[m] = weight_grad[best * M + m] / bias_grad[best];
    return x;
}

/// Convenience overload over a gradient set; raises NoBias when the layer has
/// no bias gradient (the bias-removal defense).
template <typename T>
Tensor<T> analytic_fc_input(const LayerGradients<T>& grads, const std::string& layer) {
    const Tensor<T>* dw = nullptr;
    const Tensor<T>* db = nullptr;
    for (const auto& e : grads.entries) {
        if (e.layer != layer) continue;
        if (e.kind == "weight") dw = &e.grad;
        if (e.kind == "bias") db = &e.grad;
    }
    if (!dw) throw InvalidInput("analytic_fc_input: no weight gradient for layer " + layer);
    if (!db) throw NoBias("layer " + layer + " has no bias; analytical reconstruction infeasible");
    return analytic_fc_input(*dw, *db);
}

namespace detail {

template <typename T>
std::vector<double> group_cosines(const ModelPlan& plan, const LayerGradients<T>& a,
                                  const LayerGradients<T>& b) {
    std::vector<double> dot(plan.groups.size(), 0), sa(plan.groups.size(), 0),
        sb(plan.groups.size(), 0);
    for (size_t i = 0; i < a.entries.size(); ++i) {
        size_t g = static_cast<size_t>(a.entries[i].group);
        const auto& ga = a.entries[i].grad;
        const auto& gb = b.entries[i].grad;
        for (int64_t j = 0; j < ga.size(); ++j) {
            double va = static_cast<double>(ga[j]), vb = static_cast<double>(gb[j]);
            dot[g] += va * vb;
            sa[g] += va * va;
            sb[g] += vb * vb;
        }
    }
    std::vector<double> cos(plan.groups.size(), 0);
    for (size_t g = 0; g < cos.size(); ++g)
        if (sa[g] > 0 && sb[g] > 0) cos[g] = dot[g] / (std::sqrt(sa[g]) * std::sqrt(sb[g]));
    return cos;
}

}  // namespace detail

/// Iterative gradient-inversion attack: Adam on the dummy pixels against the
/// masked gradient distance, fresh bottleneck noise every iteration (frozen
/// within one), plateau-driven lr decay and the three stop rules.
template <typename T>
AttackResult<T> run_attack(const ModelState<T>& model, const LayerGradients<T>& victim_grads,
                           const std::vector<int64_t>& victim_shape, int label,
                           const AttackSpec& spec, RandomStream& rng,
                           const Tensor<T>* victim_image = nullptr) {
    const ModelPlan& plan = model.plan;
    std::vector<bool> mask = spec.layer_mask;
    if (spec.kind == AttackKind::Ignore && mask.empty()) mask = ignore_mask(plan);
    if (mask.empty()) mask.assign(plan.groups.size(), true);

    int y = label;
    if (spec.label_mode == LabelMode::Recovered) {
        const std::string& cls = plan.groups.back();
        y = recover_label(victim_grads.find(cls, "weight").grad);
    }

    RegWeights reg;
    reg.lambda_tv = spec.lambda_tv;
    reg.cpl_weight = spec.kind == AttackKind::Cpl ? spec.cpl_label_weight : 0.0;

    RandomStream init_rng = rng.substream("dummy_init");
    Tensor<T> x = init_rng.normal_tensor<T>(victim_shape);
    RandomStream noise_rng = rng.substream("vb_noise");

    Tensor<T> m(x.shape), v(x.shape);
    double lr = spec.lr;
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

    AttackResult<T> result;
    result.label_used = y;
    Tensor<T> best_x = x;
    double best_loss = std::numeric_limits<double>::infinity();
    int last_improvement = 0;
    int next_decay = spec.plateau_iters;

    TrajectoryRecord traj;
    if (spec.record_trajectory) {
        traj.layers = plan.groups;
        traj.tracked = spec.track;
    }

    StopReason stop = StopReason::MaxIters;
    int iter = 0;
    for (; iter < spec.max_iters; ++iter) {
        auto eps = draw_module_noise<T>(plan, 1, noise_rng);
        auto ag = attack_input_gradient(model, x, y, victim_grads, mask, spec.distance, reg, eps);

        if (spec.record_trajectory) {
            traj.cosine.push_back(detail::group_cosines(plan, ag.dummy_grads, victim_grads));
            std::vector<double> vals;
            for (const auto& t : spec.track)
                vals.push_back(static_cast<double>(ag.dummy_grads.find(t.layer, t.kind).grad[t.index]));
            traj.tracked_values.push_back(std::move(vals));
        }

        double loss = static_cast<double>(ag.loss);
        if (loss < best_loss) {
            best_loss = loss;
            best_x = x;
            last_improvement = iter;
            next_decay = iter + spec.plateau_iters;
        }
        if (loss < spec.loss_floor) {
            stop = StopReason::LossFloor;
            ++iter;
            break;
        }
        if (spec.stagnation_iters > 0 && iter - last_improvement >= spec.stagnation_iters) {
            stop = StopReason::Stagnation;
            ++iter;
            break;
        }
        if (iter >= next_decay) {
            lr *= spec.lr_decay;
            next_decay = iter + spec.plateau_iters;
        }

        double bc1 = 1.0 - std::pow(b1, iter + 1);
        double bc2 = 1.0 - std::pow(b2, iter + 1);
        for (int64_t i = 0; i < x.size(); ++i) {
            double g = static_cast<double>(ag.grad[i]);
            m[i] = static_cast<T>(b1 * static_cast<double>(m[i]) + (1 - b1) * g);
            v[i] = static_cast<T>(b2 * static_cast<double>(v[i]) + (1 - b2) * g * g);
            double mhat = static_cast<double>(m[i]) / bc1;
            double vhat = static_cast<double>(v[i]) / bc2;
            x[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + adam_eps));
        }
    }

    result.reconstruction = best_x;
    result.final_loss = best_loss;
    result.iterations = iter;
    result.stop = stop;
    if (spec.record_trajectory) result.trajectory = std::move(traj);
    if (victim_image) {
        result.mse = metrics::mse(result.reconstruction, *victim_image);
        result.psnr = metrics::psnr(result.reconstruction, *victim_image);
        result.ssim = metrics::ssim(result.reconstruction, *victim_image);
    }
    return result;
}

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::LossFloor: return "loss_floor";
        case StopReason::Stagnation: return "stagnation";
        case StopReason::MaxIters: return "max_iters";
    }
    return "unknown";
}

inline void to_json(nlohmann::json& j, const TrajectoryRecord& t) {
    nlohmann::json tracked = nlohmann::json::array();
    for (const auto& e : t.tracked)
        tracked.push_back({{"layer", e.layer}, {"kind", e.kind}, {"index", e.index}});
    j = {{"layers", t.layers},
         {"cosine", t.cosine},
         {"tracked", tracked},
         {"tracked_values", t.tracked_values}};
}

template <typename T>
void to_json(nlohmann::json& j, const AttackResult<T>& r) {
    j = {{"final_loss", r.final_loss}, {"iterations", r.iterations},
         {"stop", to_string(r.stop)},  {"mse", r.mse},
         {"psnr", std::isfinite(r.psnr) ? nlohmann::json(r.psnr) : nlohmann::json("inf")},
         {"ssim", r.ssim},             {"label_used", r.label_used}};
    if (r.trajectory) j["trajectory"] = *r.trajectory;
}

}  // namespace gradlab
