#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "gradlab/attacks.hpp"
#include "gradlab/config.hpp"
#include "gradlab/datasets.hpp"
#include "gradlab/fedsim.hpp"

namespace gradlab {

/// Loads a dataset by id. "mnist" expects the four standard IDX files under
/// data_dir, "cifar10" expects data_batch_1.bin (train) and test_batch.bin,
/// "synthetic" generates a seeded Gaussian-blob corpus matching the model's
/// input shape.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_dataset(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.dataset == "mnist") {
        fs::path d(cfg.data_dir);
        auto train = load_idx<T>((d / "train-images-idx3-ubyte").string(),
                                 (d / "train-labels-idx1-ubyte").string(), cfg.model.input_h,
                                 cfg.model.input_w);
        auto test = load_idx<T>((d / "t10k-images-idx3-ubyte").string(),
                                (d / "t10k-labels-idx1-ubyte").string(), cfg.model.input_h,
                                cfg.model.input_w);
        return {std::move(train), std::move(test)};
    }
    if (cfg.dataset == "cifar10") {
        fs::path d(cfg.data_dir);
        auto train = load_cifar10<T>((d / "data_batch_1.bin").string());
        auto test = load_cifar10<T>((d / "test_batch.bin").string());
        return {std::move(train), std::move(test)};
    }
    if (cfg.dataset == "synthetic") {
        // one corpus split into train and held-out test so both share the
        // same class prototypes; samples are interleaved by class, so a
        // prefix split stays balanced
        int test_per_class = std::max(1, cfg.synthetic_per_class / 5);
        auto all = synthetic_blobs<T>(cfg.model.num_classes,
                                      cfg.synthetic_per_class + test_per_class, cfg.model.input_h,
                                      cfg.model.input_w, cfg.model.input_c, cfg.seed + 1);
        size_t n_train = static_cast<size_t>(cfg.model.num_classes) *
                         static_cast<size_t>(cfg.synthetic_per_class);
        auto train = all.take(n_train);
        std::vector<size_t> tail(all.size() - n_train);
        std::iota(tail.begin(), tail.end(), n_train);
        auto test = all.select(tail);
        return {std::move(train), std::move(test)};
    }
    throw InvalidInput("unknown dataset id: " + cfg.dataset);
}

template <typename T>
struct Victim {
    size_t index = 0;  // index into the client's train split
    Tensor<T> image;
    int label = 0;
    LayerGradients<T> gradient;  // single-step batch-1 gradient under the defense
};

/// Draws n distinct victims from one client's train split and computes each
/// one's exchanged gradient under the configured defense.
template <typename T>
std::vector<Victim<T>> sample_victims(const ModelState<T>& model, const Dataset<T>& ds,
                                      const std::vector<size_t>& split, int n,
                                      const DefenseSpec& defense, uint64_t seed) {
    if (n < 1) throw InvalidInput("sample_victims: n must be positive");
    if (static_cast<size_t>(n) > split.size())
        throw InvalidInput("sample_victims: fewer split samples than victims");
    RandomStream rng(seed);
    std::vector<size_t> pool = split;
    std::vector<Victim<T>> victims;
    for (int i = 0; i < n; ++i) {
        size_t pick = static_cast<size_t>(rng.below(pool.size()));
        size_t idx = pool[pick];
        pool[pick] = pool.back();
        pool.pop_back();

        Victim<T> v;
        v.index = idx;
        v.image = ds.images[idx];
        v.label = ds.labels[idx];
        RandomStream grng = rng.substream("victim_grad_" + std::to_string(i));
        auto [loss, grads] = param_gradients(model, v.image, v.label, grng);
        (void)loss;
        RandomStream drng = rng.substream("victim_defense_" + std::to_string(i));
        v.gradient = apply_defense(std::vector<LayerGradients<T>>{std::move(grads)}, defense, drng);
        victims.push_back(std::move(v));
    }
    return victims;
}

template <typename T>
struct ResultsBundle {
    ExperimentConfig config;
    MetricReport report;
    std::vector<AttackResult<T>> attacks;
    std::vector<int> victim_labels;
    std::vector<Tensor<T>> victim_images;
    std::vector<RoundLog> history;
    int64_t parameter_count = 0;
    double accuracy = 0;  // global model accuracy on the test split
    int failed_victims = 0;
};

/// Full experiment: train (or load), sample victims, attack each one
/// independently, aggregate metrics. A victim whose attack raises a numerical
/// failure is recorded as an unsuccessful reconstruction (SSIM 0).
template <typename T>
ResultsBundle<T> run_experiment(const ExperimentConfig& cfg) {
    auto [train, test] = load_dataset<T>(cfg);

    ModelState<T> model = cfg.checkpoint.empty() ? build_model<T>(cfg.model, cfg.seed)
                                                 : load_checkpoint<T>(cfg.checkpoint);
    ResultsBundle<T> bundle;
    bundle.config = cfg;
    bundle.parameter_count = count_parameters(model.spec);

    FedConfig fed = cfg.fed;
    fed.seed = cfg.seed;
    if (cfg.train_rounds > 0 && cfg.checkpoint.empty()) {
        fed.rounds = cfg.train_rounds;
        auto r = run_federation(model, train, fed);
        bundle.history = r.history;
    }
    {
        std::vector<size_t> test_idx(test.size());
        std::iota(test_idx.begin(), test_idx.end(), 0);
        RandomStream arng = RandomStream(cfg.seed).substream("test_accuracy");
        bundle.accuracy = evaluate_accuracy(model, test, test_idx, fed.batch_size, arng);
    }

    auto shards = partition_dataset(train.size(), fed.clients, fed.val_fraction, fed.seed);
    RandomStream root(cfg.seed);
    auto victims = sample_victims(model, train, shards[0].train, cfg.victims, cfg.defense,
                                  root.substream("victims").seed());

    for (size_t i = 0; i < victims.size(); ++i) {
        const auto& v = victims[i];
        AttackSpec aspec = cfg.attack;
        aspec.seed = cfg.seed;
        RandomStream arng = root.substream("attack_" + std::to_string(i));
        AttackResult<T> res;
        try {
            res = run_attack(model, v.gradient, v.image.shape, v.label, aspec, arng, &v.image);
        } catch (const NumericalFailure&) {
            res.reconstruction = Tensor<T>(v.image.shape);
            res.final_loss = std::numeric_limits<double>::infinity();
            res.ssim = 0;
            res.psnr = 0;
            res.mse = 1;
            ++bundle.failed_victims;
        }
        bundle.report.mse.push_back(res.mse);
        bundle.report.psnr.push_back(res.psnr);
        bundle.report.ssim.push_back(res.ssim);
        bundle.victim_labels.push_back(v.label);
        bundle.victim_images.push_back(v.image);
        bundle.attacks.push_back(std::move(res));
    }
    bundle.report.finalize();
    return bundle;
}

inline std::string defense_label(const ExperimentConfig& cfg) {
    std::ostringstream s;
    switch (cfg.defense.kind) {
        case DefenseKind::None: return "none";
        case DefenseKind::Dp:
            s << "dp(C=" << cfg.defense.clip << ";sigma=" << cfg.defense.noise << ")";
            break;
        case DefenseKind::Gc:
            s << "gc(p=" << cfg.defense.prune_ratio << ")";
            break;
        case DefenseKind::Precode:
        case DefenseKind::Cvb: {
            const auto& m = cfg.model.privacy.front();
            s << (cfg.defense.kind == DefenseKind::Precode ? "precode" : "cvb");
            s << "(P=" << m.position;
            if (m.kind == PrivacyKind::CVB) s << ";k=" << m.kernel << ";s=" << m.scale;
            s << ";beta=" << m.beta << ")";
            break;
        }
    }
    return s.str();
}

namespace plots {

/// Minimal multi-series line plot (one polyline per series, legend at right).
inline std::string svg_line_plot(const std::vector<std::string>& names,
                                 const std::vector<std::vector<double>>& series,
                                 const std::string& title, const std::string& x_label,
                                 const std::string& y_label) {
    if (names.size() != series.size() || series.empty())
        throw InvalidInput("svg_line_plot: names/series mismatch");
    const double W = 760, H = 420, L = 60, R = 170, Tm = 40, B = 50;
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    size_t npts = 0;
    for (const auto& s : series) {
        npts = std::max(npts, s.size());
        for (double v : s) {
            if (!std::isfinite(v)) continue;
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (npts < 2) throw InvalidInput("svg_line_plot: need at least two points");
    if (!(ymax > ymin)) {
        ymax = ymin + 1;
        ymin -= 1;
    }
    double pw = W - L - R, ph = H - Tm - B;
    auto px = [&](size_t i, size_t n) {
        return L + pw * static_cast<double>(i) / static_cast<double>(n - 1);
    };
    auto py = [&](double v) { return Tm + ph * (1.0 - (v - ymin) / (ymax - ymin)); };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    std::ostringstream svg;
    svg << std::setprecision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << L << "\" y=\"24\" font-size=\"15\" font-family=\"sans-serif\">" << title
        << "</text>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << (H - B)
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << (H - B) << "\" x2=\"" << (W - R) << "\" y2=\""
        << (H - B) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        double v = ymin + (ymax - ymin) * t / 4.0;
        svg << "<text x=\"" << (L - 8) << "\" y=\"" << (py(v) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">"
            << std::setprecision(3) << v << std::setprecision(6) << "</text>\n";
    }
    svg << "<text x=\"" << (L + pw / 2) << "\" y=\"" << (H - 14)
        << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">" << x_label
        << "</text>\n";
    svg << "<text x=\"16\" y=\"" << (Tm + ph / 2)
        << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 16 "
        << (Tm + ph / 2) << ")\">" << y_label << "</text>\n";
    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % 10];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        size_t n = series[s].size();
        for (size_t i = 0; i < n; ++i) {
            double v = series[s][i];
            if (!std::isfinite(v)) v = ymin;
            svg << px(i, std::max<size_t>(n, 2)) << "," << py(v) << " ";
        }
        svg << "\"/>\n";
        double ly = Tm + 16 + 16 * static_cast<double>(s);
        svg << "<line x1=\"" << (W - R + 10) << "\" y1=\"" << ly << "\" x2=\"" << (W - R + 34)
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << (W - R + 40) << "\" y=\"" << (ly + 4)
            << "\" font-size=\"11\" font-family=\"sans-serif\">" << names[s] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

/// Binary PPM grid: originals on the top row of each pair, reconstructions
/// below, clamped to [0, 1]. Grayscale images are replicated across RGB.
template <typename T>
std::string ppm_grid(const std::vector<Tensor<T>>& originals,
                     const std::vector<Tensor<T>>& reconstructions, int per_row = 8) {
    if (originals.empty() || originals.size() != reconstructions.size())
        throw InvalidInput("ppm_grid: image list mismatch");
    int64_t h = originals[0].dim(0), w = originals[0].dim(1), c = originals[0].dim(2);
    int cols = std::min<int>(per_row, static_cast<int>(originals.size()));
    int rows = static_cast<int>((originals.size() + cols - 1) / cols);
    const int64_t gap = 2;
    int64_t gw = cols * (w + gap) - gap;
    int64_t gh = rows * (2 * h + 3 * gap) - gap;
    std::vector<unsigned char> canvas(static_cast<size_t>(gw * gh * 3), 255);
    auto blit = [&](const Tensor<T>& img, int64_t oy, int64_t ox) {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t ch = 0; ch < 3; ++ch) {
                    double v = metrics::clamp01(img[(y * w + x) * c + (c == 3 ? ch : 0)]);
                    canvas[static_cast<size_t>((((oy + y) * gw) + ox + x) * 3 + ch)] =
                        static_cast<unsigned char>(v * 255.0 + 0.5);
                }
    };
    for (size_t i = 0; i < originals.size(); ++i) {
        int64_t r = static_cast<int64_t>(i) / cols, col = static_cast<int64_t>(i) % cols;
        int64_t ox = col * (w + gap);
        int64_t oy = r * (2 * h + 3 * gap);
        blit(originals[i], oy, ox);
        blit(reconstructions[i], oy + h + gap, ox);
    }
    std::ostringstream out;
    out << "P6\n" << gw << " " << gh << "\n255\n";
    out.write(reinterpret_cast<const char*>(canvas.data()),
              static_cast<std::streamsize>(canvas.size()));
    return out.str();
}

}  // namespace plots

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("write failed: " + path.string());
}

template <typename T>
void write_raw_images(const std::filesystem::path& path, const std::vector<Tensor<T>>& images) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path.string());
    for (const auto& img : images)
        f.write(reinterpret_cast<const char*>(img.data.data()),
                static_cast<std::streamsize>(img.data.size() * sizeof(T)));
    if (!f) throw Error("write failed: " + path.string());
}

}  // namespace detail

inline std::string summary_csv_row(const std::string& defense, int64_t params,
                                   const MetricReport& r, double accuracy) {
    std::ostringstream s;
    s << defense << ',' << params << ',' << std::fixed << std::setprecision(6) << r.ssim_mean << ','
      << r.ssim_std << ',' << std::setprecision(2) << r.asr << ',' << std::setprecision(4)
      << (std::isfinite(r.psnr_mean) ? r.psnr_mean : 0.0) << ',' << accuracy << '\n';
    return s.str();
}

inline constexpr const char* kSummaryCsvHeader =
    "defense,params,ssim_mean,ssim_std,asr,psnr_mean,accuracy\n";

/// Writes the full artifact set for one experiment into its output directory:
/// results.json, summary.csv, victims.csv, training history, raw image arrays,
/// a reconstruction grid and trajectory plots.
template <typename T>
void emit_report(const ResultsBundle<T>& bundle, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::path out(out_dir);
    fs::create_directories(out);

    nlohmann::json j;
    j["config"] = bundle.config;
    j["metrics"] = bundle.report;
    j["defense_label"] = defense_label(bundle.config);
    j["parameter_count"] = bundle.parameter_count;
    j["accuracy"] = bundle.accuracy;
    j["failed_victims"] = bundle.failed_victims;
    j["environment"] = {{"seed", bundle.config.seed},
                        {"precision", static_cast<int>(sizeof(T)) * 8},
                        {"image_shape", bundle.victim_images.empty()
                                            ? std::vector<int64_t>{}
                                            : bundle.victim_images.front().shape},
                        {"image_files", {"victims.raw", "reconstructions.raw"}},
                        {"byte_order", "little-endian"}};
    nlohmann::json attacks = nlohmann::json::array();
    for (const auto& a : bundle.attacks) {
        nlohmann::json aj;
        to_json(aj, a);
        attacks.push_back(std::move(aj));
    }
    j["attacks"] = attacks;
    j["labels"] = bundle.victim_labels;
    detail::write_file(out / "results.json", j.dump(2) + "\n");

    std::string summary = kSummaryCsvHeader;
    summary += summary_csv_row(defense_label(bundle.config), bundle.parameter_count, bundle.report,
                               bundle.accuracy);
    detail::write_file(out / "summary.csv", summary);

    std::ostringstream victims;
    victims << "victim,label,ssim,psnr,mse,final_loss,iterations,stop\n";
    for (size_t i = 0; i < bundle.attacks.size(); ++i) {
        const auto& a = bundle.attacks[i];
        victims << i << ',' << bundle.victim_labels[i] << ',' << a.ssim << ','
                << (std::isfinite(a.psnr) ? a.psnr : 0.0) << ',' << a.mse << ',' << a.final_loss
                << ',' << a.iterations << ',' << to_string(a.stop) << '\n';
    }
    detail::write_file(out / "victims.csv", victims.str());

    if (!bundle.history.empty())
        detail::write_file(out / "history.csv", history_csv(bundle.history));

    detail::write_raw_images(out / "victims.raw", bundle.victim_images);
    std::vector<Tensor<T>> recons;
    for (const auto& a : bundle.attacks) recons.push_back(a.reconstruction);
    detail::write_raw_images(out / "reconstructions.raw", recons);
    detail::write_file(out / "grid.ppm", plots::ppm_grid(bundle.victim_images, recons));

    for (size_t i = 0; i < bundle.attacks.size(); ++i) {
        if (!bundle.attacks[i].trajectory) continue;
        const auto& t = *bundle.attacks[i].trajectory;
        std::vector<std::vector<double>> series(t.layers.size());
        for (const auto& step : t.cosine)
            for (size_t g = 0; g < step.size(); ++g) series[g].push_back(step[g]);
        detail::write_file(out / ("trajectory_" + std::to_string(i) + ".svg"),
                           plots::svg_line_plot(t.layers, series,
                                                "gradient cosine similarity by layer", "iteration",
                                                "cosine"));
    }
}

/// Expands the sweep grid, runs one experiment per combination into a
/// subdirectory, and writes a combined summary CSV.
template <typename T>
std::vector<ResultsBundle<T>> run_sweep(const ExperimentConfig& base, const std::string& out_dir) {
    if (base.model.privacy.empty())
        throw InvalidSpec("sweep requires a variational-bottleneck defense");
    auto axis = [](std::vector<double> v, double fallback) {
        return v.empty() ? std::vector<double>{fallback} : v;
    };
    auto iaxis = [](std::vector<int> v, int fallback) {
        return v.empty() ? std::vector<int>{fallback} : v;
    };
    const auto& m0 = base.model.privacy.front();
    auto betas = axis(base.sweep.beta, m0.beta);
    auto kernels = iaxis(base.sweep.kernel, m0.kernel);
    auto scales = axis(base.sweep.scale, m0.scale);
    auto positions = iaxis(base.sweep.position, m0.position);

    std::vector<ResultsBundle<T>> bundles;
    std::string combined = kSummaryCsvHeader;
    int run = 0;
    for (double beta : betas)
        for (int kernel : kernels)
            for (double scale : scales)
                for (int position : positions) {
                    ExperimentConfig cfg = base;
                    auto& m = cfg.model.privacy.front();
                    m.beta = beta;
                    m.kernel = kernel;
                    m.scale = scale;
                    m.position = position;
                    m.bottleneck = 0;  // re-derive from the new placement
                    std::string sub = out_dir + "/sweep_" + std::to_string(run++);
                    auto bundle = run_experiment<T>(cfg);
                    emit_report(bundle, sub);
                    combined += summary_csv_row(defense_label(cfg), bundle.parameter_count,
                                                bundle.report, bundle.accuracy);
                    bundles.push_back(std::move(bundle));
                }
    std::filesystem::create_directories(out_dir);
    detail::write_file(std::filesystem::path(out_dir) / "summary.csv", combined);
    return bundles;
}

}  // namespace gradlab
