#include <iostream>

#include <CLI11.hpp>

#include "cli/cli.hpp"
#include "tunnelscope/error.hpp"

int main(int argc, char** argv) {
    namespace ts = tunnelscope;
    CLI::App app{"tunnelscope: layer-wise representation analysis of small MLP classifiers"};
    app.require_subcommand(1);

    ts::cli::CliOptions options;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    const std::pair<const char*, const char*> kinds[] = {
        {"tunnel", "train a network and locate its tunnel"},
        {"ood", "probe a trained network on an out-of-distribution task"},
        {"stitch", "two-task training with extractor/tunnel swaps"},
        {"develop", "weight change and rank evolution during training"},
        {"sweep", "tunnel start across depth, width and class count"},
        {"shorter", "forgetting of truncated networks"},
        {"metrics", "metric curves of an initialized or checkpointed network"},
    };
    for (const auto& [name, help] : kinds) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", options.config_path, "JSON config (or a previous report.json)");
        sub->add_option("--set", options.overrides, "dotted key=value override, repeatable");
        sub->add_option("--out", options.out, "output directory (fallback: $TUNNELSCOPE_OUT)");
        sub->add_option("--seed", seed, "experiment seed");
        sub->add_option("--threads", threads, "worker threads for probes and sweep cells")->check(CLI::PositiveNumber);
        sub->callback([&options, &seed, &threads, sub, name = std::string(name)] {
            options.kind = name;
            if (sub->count("--seed")) options.seed = seed;
            if (sub->count("--threads")) options.threads = threads;
        });
    }
    CLI11_PARSE(app, argc, argv);

    ts::cli::RunConfig cfg;
    try {
        cfg = ts::cli::parse_config(options);
    } catch (const std::exception& e) {
        std::cerr << "tunnelscope: " << e.what() << '\n';
        return 2;
    }
    return ts::cli::run(cfg, std::cout, std::cerr);
}
