// fairsmooth: dataset generation, representation training, and probabilistic
// individual-fairness certification on synthetic factor data.
#include "fairsmooth/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    CLI::App app{"fairsmooth: certified individually fair representations at desk scale"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> workers;

    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--set", overrides, "override, repeatable: --set key=value");
    app.add_option("--seed", seed, "master seed override");
    app.add_option("--out", out, "output directory override");
    app.add_option("--workers", workers, "worker pool size override");

    auto* generate = app.add_subcommand("generate", "write the synthetic train/test datasets");
    auto* train = app.add_subcommand("train", "train encoder and noisy classifier");
    auto* certifyCmd = app.add_subcommand("certify", "certify the test set end to end");
    auto* transfer = app.add_subcommand("transfer", "certify plus ground-truth variant audit");

    auto* sweep = app.add_subcommand("sweep", "run a config grid, one train+certify per cell");
    std::string grid_path;
    sweep->add_option("--grid", grid_path, "grid file: key = v1,v2,...")->required();

    auto* report = app.add_subcommand("report", "aggregate summaries into one table");
    std::vector<std::string> inputs;
    bool recon = false;
    report->add_option("inputs", inputs, "label=path/to/summary.csv entries");
    report->add_flag("--recon", recon, "emit the factor-reconstruction grid instead");

    CLI11_PARSE(app, argc, argv);

    try {
        fairsmooth::cli::RunConfig cfg = fairsmooth::cli::load_config(config_path, overrides);
        if (seed) cfg.seed = *seed;
        if (out) cfg.out = *out;
        if (workers) cfg.workers = *workers;

        if (generate->parsed()) return fairsmooth::cli::cmd_generate(cfg);
        if (train->parsed()) return fairsmooth::cli::cmd_train(cfg);
        if (certifyCmd->parsed()) return fairsmooth::cli::cmd_certify(cfg);
        if (transfer->parsed()) return fairsmooth::cli::cmd_transfer(cfg);
        if (sweep->parsed()) return fairsmooth::cli::cmd_sweep(cfg, grid_path);
        if (report->parsed()) return fairsmooth::cli::cmd_report(cfg, inputs, recon);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return fairsmooth::cli::exit_code_for(e);
    }
    return 0;
}
