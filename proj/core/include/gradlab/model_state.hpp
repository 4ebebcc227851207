#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gradlab/model_spec.hpp"
#include "gradlab/random.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

/// Concrete parameter values for a ModelSpec. Immutable by convention after
/// build; training code copies it, updates the copy and swaps.
template <typename T>
struct ModelState {
    ModelSpec spec;
    ModelPlan plan;
    std::vector<Tensor<T>> params;  // aligned with plan.params
    uint64_t init_seed = 0;

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    template <typename U>
    ModelState<U> cast() const {
        ModelState<U> out;
        out.spec = spec;
        out.plan = plan;
        out.init_seed = init_seed;
        out.params.reserve(params.size());
        for (const auto& p : params) out.params.push_back(p.template cast<U>());
        return out;
    }
};

/// Fan-in-scaled uniform weights, zero biases, unit batch-norm gains.
template <typename T>
ModelState<T> build_model(const ModelSpec& spec, uint64_t seed) {
    ModelState<T> state;
    state.spec = spec;
    state.plan = plan_model(spec);
    state.init_seed = seed;
    RandomStream rng(seed);
    for (const auto& desc : state.plan.params) {
        if (desc.kind == "bias" || desc.kind == "beta") {
            state.params.push_back(Tensor<T>(desc.shape));
        } else if (desc.kind == "gamma") {
            state.params.push_back(Tensor<T>::full(desc.shape, T(1)));
        } else {
            double bound = 1.0 / std::sqrt(static_cast<double>(desc.fan_in));
            state.params.push_back(rng.uniform_tensor<T>(desc.shape, -bound, bound));
        }
    }
    return state;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "GLCK", u32 header length, JSON header (spec, seed,
// precision, array shapes), then the raw little-endian parameter arrays in
// layout order.

template <typename T>
void save_checkpoint(const ModelState<T>& state, const std::string& path) {
    nlohmann::json header;
    header["spec"] = state.spec;
    header["seed"] = state.init_seed;
    header["precision"] = sizeof(T) == 4 ? 32 : 64;
    nlohmann::json shapes = nlohmann::json::array();
    for (size_t i = 0; i < state.params.size(); ++i) {
        const auto& d = state.plan.params[i];
        shapes.push_back({{"layer", d.layer}, {"kind", d.kind}, {"shape", state.params[i].shape}});
    }
    header["params"] = shapes;
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write("GLCK", 4);
    uint32_t len = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : state.params)
        f.write(reinterpret_cast<const char*>(p.data.data()),
                static_cast<std::streamsize>(p.data.size() * sizeof(T)));
    if (!f) throw Error("checkpoint write failed: " + path);
}

template <typename T>
ModelState<T> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "GLCK") throw CorruptDataset("bad checkpoint magic: " + path);
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    f.read(hs.data(), len);
    if (!f) throw CorruptDataset("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);

    int precision = header.at("precision");
    if (precision != static_cast<int>(sizeof(T)) * 8)
        throw InvalidInput("checkpoint precision mismatch");

    ModelState<T> state;
    state.spec = header.at("spec").get<ModelSpec>();
    state.plan = plan_model(state.spec);
    state.init_seed = header.at("seed");
    for (const auto& d : state.plan.params) {
        Tensor<T> p(d.shape);
        f.read(reinterpret_cast<char*>(p.data.data()),
               static_cast<std::streamsize>(p.data.size() * sizeof(T)));
        state.params.push_back(std::move(p));
    }
    if (!f) throw CorruptDataset("truncated checkpoint arrays: " + path);
    return state;
}

}  // namespace gradlab
