// Command-line front end: train a federated model, run gradient-inversion
// attacks against sampled victims, sweep bottleneck hyperparameters, or
// re-render reports from an existing results bundle.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"

#include "gradlab/labbench.hpp"

namespace {

struct CliOverrides {
    std::string config_path;
    std::string out;
    std::string checkpoint;
    int64_t seed = -1;
    int victims = -1;
    int precision = 0;
};

gradlab::ExperimentConfig load_config(const CliOverrides& cli) {
    gradlab::ConfigFile file =
        cli.config_path.empty() ? gradlab::ConfigFile() : gradlab::ConfigFile::load(cli.config_path);
    gradlab::ExperimentConfig cfg = gradlab::ExperimentConfig::from_file(file);
    if (!cli.out.empty()) cfg.out_dir = cli.out;
    if (!cli.checkpoint.empty()) cfg.checkpoint = cli.checkpoint;
    if (cli.seed >= 0) {
        cfg.seed = static_cast<uint64_t>(cli.seed);
        cfg.fed.seed = cfg.seed;
    }
    if (cli.victims > 0) cfg.victims = cli.victims;
    if (cli.precision > 0) cfg.precision = cli.precision;
    if (cfg.precision != 32 && cfg.precision != 64)
        throw gradlab::InvalidInput("--precision must be 32 or 64");
    return cfg;
}

template <typename T>
int do_train(const gradlab::ExperimentConfig& cfg) {
    auto [train, test] = gradlab::load_dataset<T>(cfg);
    gradlab::ModelState<T> model = cfg.checkpoint.empty()
                                       ? gradlab::build_model<T>(cfg.model, cfg.seed)
                                       : gradlab::load_checkpoint<T>(cfg.checkpoint);
    auto result = gradlab::run_federation(model, train, cfg.fed);

    std::filesystem::create_directories(cfg.out_dir);
    gradlab::save_checkpoint(model, cfg.out_dir + "/model.ckpt");
    gradlab::detail::write_file(std::filesystem::path(cfg.out_dir) / "history.csv",
                                gradlab::history_csv(result.history));
    std::vector<size_t> test_idx(test.size());
    std::iota(test_idx.begin(), test_idx.end(), 0);
    gradlab::RandomStream arng = gradlab::RandomStream(cfg.seed).substream("test_accuracy");
    double acc = gradlab::evaluate_accuracy(model, test, test_idx, cfg.fed.batch_size, arng);
    std::cout << "rounds: " << result.history.size()
              << (result.early_stopped ? " (early stop)" : "") << "\n"
              << "best round: " << result.best_round << "\n"
              << "test accuracy: " << acc << "%\n"
              << "checkpoint: " << cfg.out_dir << "/model.ckpt\n";
    return 0;
}

template <typename T>
int do_attack(const gradlab::ExperimentConfig& cfg) {
    auto bundle = gradlab::run_experiment<T>(cfg);
    gradlab::emit_report(bundle, cfg.out_dir);
    std::cout << "victims: " << bundle.attacks.size() << "\n"
              << "ssim: " << bundle.report.ssim_mean << " +- " << bundle.report.ssim_std << "\n"
              << "asr: " << bundle.report.asr << "%\n"
              << "report: " << cfg.out_dir << "\n";
    return bundle.failed_victims == static_cast<int>(bundle.attacks.size()) ? 1 : 0;
}

template <typename T>
int do_sweep(const gradlab::ExperimentConfig& cfg) {
    auto bundles = gradlab::run_sweep<T>(cfg, cfg.out_dir);
    std::cout << "runs: " << bundles.size() << "\n"
              << "combined summary: " << cfg.out_dir << "/summary.csv\n";
    return 0;
}

int do_report(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(fs::path(dir) / "results.json");
    if (!f) throw gradlab::Error("no results.json in " + dir);
    nlohmann::json j = nlohmann::json::parse(f);

    gradlab::MetricReport report;
    report.mse = j.at("metrics").at("mse").get<std::vector<double>>();
    report.ssim = j.at("metrics").at("ssim").get<std::vector<double>>();
    for (const auto& p : j.at("metrics").at("psnr"))
        report.psnr.push_back(p.is_number() ? p.get<double>()
                                            : std::numeric_limits<double>::infinity());
    report.finalize();

    std::string summary = gradlab::kSummaryCsvHeader;
    summary += gradlab::summary_csv_row(j.at("defense_label"), j.at("parameter_count"), report,
                                        j.at("accuracy"));
    gradlab::detail::write_file(fs::path(dir) / "summary.csv", summary);

    std::ostringstream victims;
    victims << "victim,label,ssim,psnr,mse,final_loss,iterations,stop\n";
    const auto& attacks = j.at("attacks");
    const auto& labels = j.at("labels");
    for (size_t i = 0; i < attacks.size(); ++i) {
        const auto& a = attacks[i];
        double psnr = a.at("psnr").is_number() ? a.at("psnr").get<double>() : 0.0;
        victims << i << ',' << labels[i].get<int>() << ',' << a.at("ssim").get<double>() << ','
                << psnr << ',' << a.at("mse").get<double>() << ','
                << a.at("final_loss").get<double>() << ',' << a.at("iterations").get<int>() << ','
                << a.at("stop").get<std::string>() << '\n';
    }
    gradlab::detail::write_file(fs::path(dir) / "victims.csv", victims.str());

    for (size_t i = 0; i < attacks.size(); ++i) {
        if (!attacks[i].contains("trajectory")) continue;
        const auto& t = attacks[i].at("trajectory");
        auto layer_names = t.at("layers").get<std::vector<std::string>>();
        auto cosine = t.at("cosine").get<std::vector<std::vector<double>>>();
        std::vector<std::vector<double>> series(layer_names.size());
        for (const auto& step : cosine)
            for (size_t g = 0; g < step.size(); ++g) series[g].push_back(step[g]);
        gradlab::detail::write_file(
            fs::path(dir) / ("trajectory_" + std::to_string(i) + ".svg"),
            gradlab::plots::svg_line_plot(layer_names, series,
                                          "gradient cosine similarity by layer", "iteration",
                                          "cosine"));
    }
    std::cout << "re-rendered report in " << dir << "\n";
    return 0;
}

template <int (*F32)(const gradlab::ExperimentConfig&),
          int (*F64)(const gradlab::ExperimentConfig&)>
int dispatch(const CliOverrides& cli) {
    gradlab::ExperimentConfig cfg = load_config(cli);
    return cfg.precision == 64 ? F64(cfg) : F32(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated gradient-inversion laboratory"};
    app.require_subcommand(1);

    CliOverrides cli;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", cli.config_path, "configuration file (TOML-style sections)");
        sub->add_option("--seed", cli.seed, "override experiment seed");
        sub->add_option("--out", cli.out, "output directory");
        sub->add_option("--checkpoint", cli.checkpoint, "model checkpoint to load");
        sub->add_option("--victims", cli.victims, "number of victims to attack");
        sub->add_option("--precision", cli.precision, "floating-point width (32 or 64)")
            ->check(CLI::IsMember({0, 32, 64}));
    };

    CLI::App* train = app.add_subcommand("train", "federated training to a checkpoint");
    add_common(train);
    CLI::App* attack = app.add_subcommand("attack", "attack sampled victims and write a report");
    add_common(attack);
    CLI::App* sweep = app.add_subcommand("sweep", "grid over bottleneck hyperparameters");
    add_common(sweep);
    std::string report_dir = ".";
    CLI::App* report = app.add_subcommand("report", "re-render reports from results.json");
    report->add_option("--out", report_dir, "directory containing results.json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train)) return dispatch<do_train<float>, do_train<double>>(cli);
        if (app.got_subcommand(attack)) return dispatch<do_attack<float>, do_attack<double>>(cli);
        if (app.got_subcommand(sweep)) return dispatch<do_sweep<float>, do_sweep<double>>(cli);
        if (app.got_subcommand(report)) return do_report(report_dir);
    } catch (const gradlab::NumericalFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
