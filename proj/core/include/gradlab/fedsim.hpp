#pragma once

#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradlab/datasets.hpp"
#include "gradlab/diffcore.hpp"
#include "gradlab/model_state.hpp"

namespace gradlab {

struct FedConfig {
    int clients = 10;
    int rounds = 300;
    int local_epochs = 1;
    int batch_size = 64;
    double lr = 0.001;       // client Adam
    double val_fraction = 0.10;
    int patience = 40;       // rounds without mean-val-loss improvement
    uint64_t seed = 0;

    void validate() const {
        if (clients < 1 || rounds < 1 || local_epochs < 1 || batch_size < 1)
            throw InvalidSpec("federation sizes must be positive");
        if (lr <= 0) throw InvalidSpec("learning rate must be positive");
        if (val_fraction < 0 || val_fraction >= 1)
            throw InvalidSpec("validation fraction must be in [0, 1)");
    }
};

/// One client's local indices into the shared dataset.
struct ClientShard {
    std::vector<size_t> train;
    std::vector<size_t> val;
};

struct RoundLog {
    int round = 0;
    double train_loss = 0;  // mean local training loss
    double val_loss = 0;    // mean client validation loss
    double val_accuracy = 0;
};

/// IID partition: a seeded shuffle split evenly across clients (remainder
/// spread round-robin), then the tail val_fraction of every shard held out.
inline std::vector<ClientShard> partition_dataset(size_t n, int clients, double val_fraction,
                                                  uint64_t seed) {
    if (clients < 1) throw InvalidSpec("need at least one client");
    if (n < static_cast<size_t>(clients)) throw InvalidInput("fewer samples than clients");
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    RandomStream rng(seed);
    for (size_t i = n - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<size_t>(rng.below(i + 1))]);

    std::vector<ClientShard> shards(static_cast<size_t>(clients));
    size_t base = n / static_cast<size_t>(clients), rem = n % static_cast<size_t>(clients);
    size_t pos = 0;
    for (size_t c = 0; c < shards.size(); ++c) {
        size_t take = base + (c < rem ? 1 : 0);
        std::vector<size_t> local(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                  idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
        pos += take;
        size_t nval = static_cast<size_t>(val_fraction * static_cast<double>(take));
        if (val_fraction > 0 && nval == 0 && take > 1) nval = 1;
        shards[c].train.assign(local.begin(), local.end() - static_cast<std::ptrdiff_t>(nval));
        shards[c].val.assign(local.end() - static_cast<std::ptrdiff_t>(nval), local.end());
        if (shards[c].train.empty()) throw InvalidInput("client shard has no training samples");
    }
    return shards;
}

namespace detail {

template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    int64_t t = 0;

    explicit AdamState(const ModelState<T>& s) {
        for (const auto& p : s.params) {
            m.emplace_back(p.shape);
            v.emplace_back(p.shape);
        }
    }

    void step(ModelState<T>& s, const LayerGradients<T>& g, double lr) {
        ++t;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t i = 0; i < s.params.size(); ++i) {
            auto& p = s.params[i];
            const auto& gi = g.entries[i].grad;
            for (int64_t j = 0; j < p.size(); ++j) {
                double gv = static_cast<double>(gi[j]);
                m[i][j] = static_cast<T>(b1 * static_cast<double>(m[i][j]) + (1 - b1) * gv);
                v[i][j] = static_cast<T>(b2 * static_cast<double>(v[i][j]) + (1 - b2) * gv * gv);
                double mhat = static_cast<double>(m[i][j]) / bc1;
                double vhat = static_cast<double>(v[i][j]) / bc2;
                p[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

}  // namespace detail

/// Mean loss over the given indices, evaluated in batches.
template <typename T>
double evaluate_loss(const ModelState<T>& state, const Dataset<T>& ds,
                     const std::vector<size_t>& idx, int batch_size, RandomStream& rng) {
    if (idx.empty()) throw InvalidInput("evaluate_loss: no samples");
    double total = 0;
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(at),
                              idx.begin() + static_cast<std::ptrdiff_t>(
                                                std::min(at + static_cast<size_t>(batch_size),
                                                         idx.size())));
        Tensor<T> xs = stack_batch(ds, b);
        std::vector<int> ys;
        for (size_t i : b) ys.push_back(ds.labels[i]);
        Tape<T> tape;
        int xn = tape.constant(xs);
        std::vector<int> params;
        for (const auto& p : state.params) params.push_back(tape.constant(p));
        auto eps = draw_module_noise<T>(state.plan, xs.dim(0), rng);
        auto g = build_forward(tape, state, xn, params, ys, eps);
        total += static_cast<double>(tape.val(g.loss)[0]) * static_cast<double>(b.size());
    }
    return total / static_cast<double>(idx.size());
}

/// Classification accuracy (%) over the given indices.
template <typename T>
double evaluate_accuracy(const ModelState<T>& state, const Dataset<T>& ds,
                         const std::vector<size_t>& idx, int batch_size, RandomStream& rng) {
    if (idx.empty()) throw InvalidInput("evaluate_accuracy: no samples");
    int64_t hits = 0;
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(at),
                              idx.begin() + static_cast<std::ptrdiff_t>(
                                                std::min(at + static_cast<size_t>(batch_size),
                                                         idx.size())));
        Tensor<T> xs = stack_batch(ds, b);
        auto r = forward_eval(state, xs, rng);
        int64_t C = r.prediction.dim(1);
        for (size_t i = 0; i < b.size(); ++i) {
            int64_t best = 0;
            for (int64_t c = 1; c < C; ++c)
                if (r.prediction[static_cast<int64_t>(i) * C + c] >
                    r.prediction[static_cast<int64_t>(i) * C + best])
                    best = c;
            if (best == ds.labels[b[i]]) ++hits;
        }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(idx.size());
}

/// One client round: local Adam epochs from the global state; returns the
/// parameter delta (local minus global) and the mean training loss.
template <typename T>
std::pair<std::vector<Tensor<T>>, double> local_train(const ModelState<T>& global,
                                                      const Dataset<T>& ds,
                                                      const std::vector<size_t>& train_idx,
                                                      const FedConfig& cfg, RandomStream& rng) {
    ModelState<T> local = global;
    detail::AdamState<T> adam(local);
    double loss_sum = 0;
    int64_t batches = 0;
    std::vector<size_t> order = train_idx;
    for (int e = 0; e < cfg.local_epochs; ++e) {
        for (size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<size_t>(rng.below(i + 1))]);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            std::vector<size_t> b(
                order.begin() + static_cast<std::ptrdiff_t>(at),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min(at + static_cast<size_t>(cfg.batch_size),
                                             order.size())));
            Tensor<T> xs = stack_batch(ds, b);
            std::vector<int> ys;
            for (size_t i : b) ys.push_back(ds.labels[i]);
            auto [loss, grads] = param_gradients_batch(local, xs, ys, rng);
            adam.step(local, grads, cfg.lr);
            loss_sum += static_cast<double>(loss);
            ++batches;
        }
    }
    std::vector<Tensor<T>> delta;
    delta.reserve(local.params.size());
    for (size_t i = 0; i < local.params.size(); ++i) {
        Tensor<T> d(local.params[i].shape);
        for (int64_t j = 0; j < d.size(); ++j) d[j] = local.params[i][j] - global.params[i][j];
        delta.push_back(std::move(d));
    }
    return {std::move(delta), loss_sum / static_cast<double>(batches)};
}

/// Mean of client deltas in fixed client order, applied to the global state.
template <typename T>
void aggregate(ModelState<T>& global, const std::vector<std::vector<Tensor<T>>>& deltas) {
    if (deltas.empty()) throw InvalidInput("aggregate: no client updates");
    double k = static_cast<double>(deltas.size());
    for (const auto& d : deltas)
        if (d.size() != global.params.size()) throw InvalidInput("aggregate: layout mismatch");
    for (size_t i = 0; i < global.params.size(); ++i)
        for (int64_t j = 0; j < global.params[i].size(); ++j) {
            double s = 0;
            for (const auto& d : deltas) s += static_cast<double>(d[i][j]);
            global.params[i][j] += static_cast<T>(s / k);
        }
}

struct FederationResult {
    std::vector<RoundLog> history;
    int best_round = 0;
    double best_val_loss = 0;
    bool early_stopped = false;
};

/// Synchronous federated averaging with early stopping on the mean client
/// validation loss; `state` ends at the best-validation parameters.
template <typename T>
FederationResult run_federation(ModelState<T>& state, const Dataset<T>& ds, const FedConfig& cfg) {
    cfg.validate();
    auto shards = partition_dataset(ds.size(), cfg.clients, cfg.val_fraction, cfg.seed);
    std::vector<size_t> all_val;
    for (const auto& s : shards) all_val.insert(all_val.end(), s.val.begin(), s.val.end());
    bool has_val = !all_val.empty();

    RandomStream root(cfg.seed);
    FederationResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    ModelState<T> best = state;

    for (int round = 0; round < cfg.rounds; ++round) {
        std::vector<std::vector<Tensor<T>>> deltas;
        double train_loss = 0;
        for (int c = 0; c < cfg.clients; ++c) {
            RandomStream crng = root.substream("round_" + std::to_string(round) + "_client_" +
                                               std::to_string(c));
            auto [delta, loss] =
                local_train(state, ds, shards[static_cast<size_t>(c)].train, cfg, crng);
            deltas.push_back(std::move(delta));
            train_loss += loss;
        }
        aggregate(state, deltas);

        RoundLog log;
        log.round = round;
        log.train_loss = train_loss / cfg.clients;
        if (has_val) {
            RandomStream vrng = root.substream("val_" + std::to_string(round));
            log.val_loss = evaluate_loss(state, ds, all_val, cfg.batch_size, vrng);
            RandomStream arng = root.substream("acc_" + std::to_string(round));
            log.val_accuracy = evaluate_accuracy(state, ds, all_val, cfg.batch_size, arng);
        }
        result.history.push_back(log);

        if (has_val) {
            if (log.val_loss < result.best_val_loss) {
                result.best_val_loss = log.val_loss;
                result.best_round = round;
                best = state;
            } else if (cfg.patience > 0 && round - result.best_round >= cfg.patience) {
                result.early_stopped = true;
                break;
            }
        }
    }
    if (has_val) state = best;
    return result;
}

inline std::string history_csv(const std::vector<RoundLog>& history) {
    std::ostringstream out;
    out << "round,train_loss,val_loss,val_accuracy\n";
    for (const auto& r : history)
        out << r.round << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy << '\n';
    return out.str();
}

}  // namespace gradlab
