// Command-line driver for the out-of-distribution-dynamics laboratory:
// dataset generation, predictor training, anomaly scoring, CUSUM detection,
// metric evaluation, and report emission, all driven by one JSON config.
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "oodd/config.hpp"
#include "oodd/pipeline.hpp"
#include "oodd/version.hpp"

namespace {

struct CliOverrides {
    std::string config_path;
    std::string out_dir;
    std::string scale = "desk";
    bool scale_set = false;
    bool out_set = false;
    bool seed_set = false;
    bool jobs_set = false;
    std::uint64_t seed = 0;
    int jobs = 0;
};

oodd::ExperimentConfig resolve_config(const CliOverrides& cli) {
    oodd::ExperimentConfig cfg = oodd::default_config(cli.scale);
    if (!cli.config_path.empty()) cfg = oodd::load_config_file(cli.config_path, std::move(cfg));
    if (cli.scale_set) cfg.scale = cli.scale;
    if (cli.out_set) cfg.out_dir = cli.out_dir;
    if (cli.seed_set) cfg.seed = cli.seed;
    if (cli.jobs_set) cfg.jobs = cli.jobs;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"out-of-distribution dynamics detection pipeline"};
    app.set_version_flag("--version", std::string(oodd::kVersion));
    app.require_subcommand(1);

    CliOverrides cli;
    app.add_option("--config", cli.config_path, "JSON config file; fields override the scale preset")
        ->check(CLI::ExistingFile);
    app.add_option("--scale", cli.scale, "built-in preset: desk or full")
        ->check(CLI::IsMember({"desk", "full"}))
        ->each([&](const std::string&) { cli.scale_set = true; });
    app.add_option("--out", cli.out_dir, "output directory (overrides config)")
        ->each([&](const std::string&) { cli.out_set = true; });
    app.add_option("--seed", cli.seed, "global seed (overrides config)")
        ->each([&](const std::string&) { cli.seed_set = true; });
    app.add_option("--jobs", cli.jobs, "worker threads; 0 = hardware concurrency")
        ->each([&](const std::string&) { cli.jobs_set = true; });

    const char* stages[] = {"gen-data", "train", "score", "detect", "eval", "report", "all"};
    const char* descr[] = {"generate nominal and anomalous datasets",
                           "train predictor ensembles",
                           "compute anomaly score series",
                           "run the CUSUM detector over score series",
                           "compute AUC/delay/FAR metrics",
                           "emit final report tables",
                           "run the whole pipeline"};
    for (int i = 0; i < 7; ++i) app.add_subcommand(stages[i], descr[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        oodd::ExperimentConfig cfg = resolve_config(cli);
        if (cfg.jobs == 0) {
            cfg.jobs = static_cast<int>(std::thread::hardware_concurrency());
            if (cfg.jobs < 1) cfg.jobs = 1;
        }
        oodd::write_run_manifest(cfg.out_dir, cfg);
        {
            // The manifest must reparse to the exact same configuration.
            const oodd::ExperimentConfig reread = oodd::read_run_manifest(cfg.out_dir);
            if (!(reread == cfg)) {
                throw oodd::IoError("run manifest does not round-trip the configuration");
            }
        }
        const std::string stage = app.get_subcommands().front()->get_name();
        if (stage == "gen-data") {
            oodd::run_gen_data(cfg);
        } else if (stage == "train") {
            oodd::run_train(cfg);
        } else if (stage == "score") {
            oodd::run_score(cfg);
        } else if (stage == "detect") {
            oodd::run_detect(cfg);
        } else if (stage == "eval") {
            oodd::run_eval(cfg);
        } else if (stage == "report") {
            oodd::run_report(cfg);
        } else {
            oodd::run_all(cfg);
        }
    } catch (const oodd::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
