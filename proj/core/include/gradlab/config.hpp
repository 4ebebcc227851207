#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradlab/attacks.hpp"
#include "gradlab/defenses.hpp"
#include "gradlab/fedsim.hpp"
#include "gradlab/model_spec.hpp"

namespace gradlab {

/// Hierarchical plaintext configuration: [section] headers, key = value lines,
/// '#' comments, quoted strings, numbers, booleans and flat arrays. Values set
/// through the environment (GRADLAB_<SECTION>_<KEY>, upper-case) take
/// precedence over the file.
class ConfigFile {
public:
    static constexpr const char* kEnvPrefix = "GRADLAB_";

    ConfigFile() = default;

    static ConfigFile parse(const std::string& text) {
        ConfigFile cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            s = trim(s);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw InvalidInput("config line " + std::to_string(lineno) +
                                                        ": unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                if (section.empty()) throw InvalidInput("config: empty section name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw InvalidInput("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            if (key.empty()) throw InvalidInput("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[section][key] = value;
        }
        return cfg;
    }

    static ConfigFile load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw Error("cannot open config: " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& section, const std::string& key) const {
        if (from_env(section, key)) return true;
        auto s = values_.find(section);
        return s != values_.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        std::string raw;
        if (!lookup(section, key, raw)) return fallback;
        return unquote(raw);
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        std::string raw;
        if (!lookup(section, key, raw)) return fallback;
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw InvalidInput("config " + section + "." + key + ": expected true/false");
    }

    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const {
        std::string raw;
        if (!lookup(section, key, raw)) return fallback;
        try {
            size_t used = 0;
            int64_t v = std::stoll(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw InvalidInput("config " + section + "." + key + ": expected integer, got " + raw);
        }
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        std::string raw;
        if (!lookup(section, key, raw)) return fallback;
        try {
            size_t used = 0;
            double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (const std::exception&) {
            throw InvalidInput("config " + section + "." + key + ": expected number, got " + raw);
        }
    }

    std::vector<double> get_array(const std::string& section, const std::string& key,
                                  std::vector<double> fallback) const {
        std::string raw;
        if (!lookup(section, key, raw)) return fallback;
        if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
            throw InvalidInput("config " + section + "." + key + ": expected [a, b, ...]");
        std::vector<double> out;
        std::string body = raw.substr(1, raw.size() - 2);
        std::istringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            out.push_back(std::stod(item));
        }
        return out;
    }

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return values_;
    }

private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }

    static std::string unquote(const std::string& s) {
        if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
            return s.substr(1, s.size() - 2);
        return s;
    }

    static const char* from_env(const std::string& section, const std::string& key) {
        std::string name = kEnvPrefix;
        for (char c : section) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        name += '_';
        for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return std::getenv(name.c_str());
    }

    bool lookup(const std::string& section, const std::string& key, std::string& out) const {
        if (const char* env = from_env(section, key)) {
            out = env;
            return true;
        }
        auto s = values_.find(section);
        if (s == values_.end()) return false;
        auto k = s->second.find(key);
        if (k == s->second.end()) return false;
        out = k->second;
        return true;
    }

    std::map<std::string, std::map<std::string, std::string>> values_;
};

/// Sweep axes: a grid over bottleneck hyperparameters, one experiment per
/// combination.
struct SweepGrid {
    std::vector<double> beta;
    std::vector<int> kernel;
    std::vector<double> scale;
    std::vector<int> position;

    size_t combinations() const {
        auto n = [](size_t k) { return k == 0 ? size_t(1) : k; };
        return n(beta.size()) * n(kernel.size()) * n(scale.size()) * n(position.size());
    }
};

/// Everything one experiment run needs; hydrated from a ConfigFile.
struct ExperimentConfig {
    std::string dataset = "synthetic";
    std::string data_dir = "data";
    int synthetic_per_class = 200;

    ModelSpec model;
    DefenseSpec defense;
    AttackSpec attack;
    FedConfig fed;
    SweepGrid sweep;

    int victims = 128;
    uint64_t seed = 0;
    std::string out_dir = "results";
    std::string checkpoint;
    int precision = 32;
    int train_rounds = 0;  // rounds before sampling victims; 0 = round-0 model

    static ExperimentConfig from_file(const ConfigFile& cfg) {
        ExperimentConfig e;
        e.dataset = cfg.get_string("experiment", "dataset", e.dataset);
        e.data_dir = cfg.get_string("experiment", "data_dir", e.data_dir);
        e.synthetic_per_class =
            static_cast<int>(cfg.get_int("experiment", "synthetic_per_class", e.synthetic_per_class));
        e.victims = static_cast<int>(cfg.get_int("experiment", "victims", e.victims));
        e.seed = static_cast<uint64_t>(cfg.get_int("experiment", "seed", 0));
        e.out_dir = cfg.get_string("experiment", "out", e.out_dir);
        e.checkpoint = cfg.get_string("experiment", "checkpoint", "");
        e.precision = static_cast<int>(cfg.get_int("experiment", "precision", e.precision));
        e.train_rounds = static_cast<int>(cfg.get_int("experiment", "train_rounds", 0));
        if (e.precision != 32 && e.precision != 64)
            throw InvalidInput("experiment.precision must be 32 or 64");
        if (e.victims < 1) throw InvalidInput("experiment.victims must be positive");

        std::string family = cfg.get_string("model", "family", "cnn");
        if (family == "cnn")
            e.model = ModelSpec::cnn();
        else if (family == "mlp")
            e.model = ModelSpec::mlp();
        else
            throw InvalidSpec("model.family must be cnn or mlp");
        e.model.input_h = cfg.get_int("model", "input_h", e.model.input_h);
        e.model.input_w = cfg.get_int("model", "input_w", e.model.input_w);
        e.model.input_c = cfg.get_int("model", "input_c", e.model.input_c);
        e.model.num_classes = static_cast<int>(cfg.get_int("model", "classes", e.model.num_classes));
        if (cfg.has("model", "conv_channels")) {
            e.model.conv_channels.clear();
            for (double v : cfg.get_array("model", "conv_channels", {}))
                e.model.conv_channels.push_back(static_cast<int>(v));
        }
        e.model.conv_kernel = static_cast<int>(cfg.get_int("model", "conv_kernel", e.model.conv_kernel));
        e.model.conv_stride = static_cast<int>(cfg.get_int("model", "conv_stride", e.model.conv_stride));
        e.model.conv_bias = cfg.get_bool("model", "conv_bias", e.model.conv_bias);
        e.model.mlp_layers = static_cast<int>(cfg.get_int("model", "mlp_layers", e.model.mlp_layers));
        e.model.mlp_width = static_cast<int>(cfg.get_int("model", "mlp_width", e.model.mlp_width));
        e.model.dense_bias = cfg.get_bool("model", "dense_bias", e.model.dense_bias);

        std::string dk = cfg.get_string("defense", "kind", "none");
        if (dk == "none")
            e.defense.kind = DefenseKind::None;
        else if (dk == "dp")
            e.defense.kind = DefenseKind::Dp;
        else if (dk == "gc")
            e.defense.kind = DefenseKind::Gc;
        else if (dk == "precode")
            e.defense.kind = DefenseKind::Precode;
        else if (dk == "cvb")
            e.defense.kind = DefenseKind::Cvb;
        else
            throw InvalidSpec("defense.kind must be none|dp|gc|precode|cvb");
        e.defense.clip = cfg.get_double("defense", "clip", e.defense.clip);
        e.defense.noise = cfg.get_double("defense", "noise", e.defense.noise);
        e.defense.prune_ratio = cfg.get_double("defense", "prune_ratio", e.defense.prune_ratio);
        e.defense.validate();

        if (e.defense.kind == DefenseKind::Precode || e.defense.kind == DefenseKind::Cvb) {
            PrivacyModuleSpec m;
            m.kind = e.defense.kind == DefenseKind::Precode ? PrivacyKind::PRECODE : PrivacyKind::CVB;
            m.position = static_cast<int>(cfg.get_int("privacy", "position",
                                                      m.kind == PrivacyKind::CVB ? 1 : 3));
            m.bottleneck = static_cast<int>(cfg.get_int("privacy", "bottleneck", 0));
            m.kernel = static_cast<int>(cfg.get_int("privacy", "kernel", 5));
            m.scale = cfg.get_double("privacy", "scale", 0.5);
            m.beta = cfg.get_double("privacy", "beta", 0.1);
            e.model.privacy.push_back(m);
        }

        std::string ak = cfg.get_string("attack", "kind", "ig");
        if (ak == "idlg")
            e.attack = AttackSpec::idlg();
        else if (ak == "cpl")
            e.attack = AttackSpec::cpl();
        else if (ak == "ig")
            e.attack = AttackSpec::ig();
        else if (ak == "ignore")
            e.attack = AttackSpec::ignore();
        else
            throw InvalidSpec("attack.kind must be idlg|cpl|ig|ignore");
        std::string dist = cfg.get_string("attack", "distance",
                                          e.attack.distance == DistanceKind::Cosine ? "cosine"
                                                                                    : "euclidean");
        if (dist == "cosine")
            e.attack.distance = DistanceKind::Cosine;
        else if (dist == "euclidean")
            e.attack.distance = DistanceKind::Euclidean;
        else
            throw InvalidSpec("attack.distance must be cosine or euclidean");
        e.attack.lambda_tv = cfg.get_double("attack", "lambda_tv", e.attack.lambda_tv);
        e.attack.cpl_label_weight = cfg.get_double("attack", "cpl_weight", e.attack.cpl_label_weight);
        std::string lm = cfg.get_string("attack", "label_mode", "known");
        if (lm == "known")
            e.attack.label_mode = LabelMode::Known;
        else if (lm == "recovered")
            e.attack.label_mode = LabelMode::Recovered;
        else
            throw InvalidSpec("attack.label_mode must be known or recovered");
        e.attack.lr = cfg.get_double("attack", "lr", e.attack.lr);
        e.attack.lr_decay = cfg.get_double("attack", "lr_decay", e.attack.lr_decay);
        e.attack.plateau_iters = static_cast<int>(cfg.get_int("attack", "plateau", e.attack.plateau_iters));
        e.attack.loss_floor = cfg.get_double("attack", "loss_floor", e.attack.loss_floor);
        e.attack.stagnation_iters =
            static_cast<int>(cfg.get_int("attack", "stagnation", e.attack.stagnation_iters));
        e.attack.max_iters = static_cast<int>(cfg.get_int("attack", "max_iters", e.attack.max_iters));
        e.attack.record_trajectory =
            cfg.get_bool("attack", "record_trajectory", e.attack.record_trajectory);

        e.fed.clients = static_cast<int>(cfg.get_int("fed", "clients", e.fed.clients));
        e.fed.rounds = static_cast<int>(cfg.get_int("fed", "rounds", e.fed.rounds));
        e.fed.local_epochs = static_cast<int>(cfg.get_int("fed", "local_epochs", e.fed.local_epochs));
        e.fed.batch_size = static_cast<int>(cfg.get_int("fed", "batch_size", e.fed.batch_size));
        e.fed.lr = cfg.get_double("fed", "lr", e.fed.lr);
        e.fed.val_fraction = cfg.get_double("fed", "val_fraction", e.fed.val_fraction);
        e.fed.patience = static_cast<int>(cfg.get_int("fed", "patience", e.fed.patience));
        e.fed.seed = e.seed;
        e.fed.validate();

        for (double v : cfg.get_array("sweep", "beta", {})) e.sweep.beta.push_back(v);
        for (double v : cfg.get_array("sweep", "kernel", {}))
            e.sweep.kernel.push_back(static_cast<int>(v));
        for (double v : cfg.get_array("sweep", "scale", {})) e.sweep.scale.push_back(v);
        for (double v : cfg.get_array("sweep", "position", {}))
            e.sweep.position.push_back(static_cast<int>(v));
        return e;
    }
};

inline void to_json(nlohmann::json& j, const DefenseSpec& d) {
    const char* kind = d.kind == DefenseKind::None ? "none"
                       : d.kind == DefenseKind::Dp ? "dp"
                       : d.kind == DefenseKind::Gc ? "gc"
                       : d.kind == DefenseKind::Precode ? "precode"
                                                        : "cvb";
    j = {{"kind", kind}, {"clip", d.clip}, {"noise", d.noise}, {"prune_ratio", d.prune_ratio}};
}

inline void to_json(nlohmann::json& j, const AttackSpec& a) {
    const char* kind = a.kind == AttackKind::Idlg ? "idlg"
                       : a.kind == AttackKind::Cpl ? "cpl"
                       : a.kind == AttackKind::Ig ? "ig"
                                                  : "ignore";
    j = {{"kind", kind},
         {"distance", a.distance == DistanceKind::Cosine ? "cosine" : "euclidean"},
         {"lambda_tv", a.lambda_tv},
         {"cpl_weight", a.cpl_label_weight},
         {"label_mode", a.label_mode == LabelMode::Known ? "known" : "recovered"},
         {"lr", a.lr},
         {"lr_decay", a.lr_decay},
         {"plateau", a.plateau_iters},
         {"loss_floor", a.loss_floor},
         {"stagnation", a.stagnation_iters},
         {"max_iters", a.max_iters}};
}

inline void to_json(nlohmann::json& j, const FedConfig& f) {
    j = {{"clients", f.clients},         {"rounds", f.rounds},
         {"local_epochs", f.local_epochs}, {"batch_size", f.batch_size},
         {"lr", f.lr},                   {"val_fraction", f.val_fraction},
         {"patience", f.patience},       {"seed", f.seed}};
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& e) {
    j = {{"dataset", e.dataset},
         {"data_dir", e.data_dir},
         {"model", e.model},
         {"defense", e.defense},
         {"attack", e.attack},
         {"fed", e.fed},
         {"victims", e.victims},
         {"seed", e.seed},
         {"out", e.out_dir},
         {"checkpoint", e.checkpoint},
         {"precision", e.precision},
         {"train_rounds", e.train_rounds}};
}

}  // namespace gradlab
