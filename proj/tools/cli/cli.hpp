#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tunnelscope/analysis.hpp"
#include "tunnelscope/serialization.hpp"

namespace tunnelscope::cli {

/// Raw command-line surface: `tunnelscope <kind> [--config F] [--set k=v]... [--out D] [--seed N] [--threads N]`.
struct CliOptions {
    std::string kind;
    std::optional<std::string> config_path;
    std::vector<std::string> overrides;  ///< dotted `key=value`
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

struct RunConfig {
    analysis::ExperimentConfig experiment;
    std::filesystem::path output_dir;
};

/// Applies one `a.b.c=value` override; `value` is parsed as JSON when it is
/// valid JSON and taken as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

/// Environment lookup, injectable for tests.
using EnvLookup = std::function<std::optional<std::string>(const char*)>;
std::optional<std::string> system_env(const char* name);

/// Precedence, lowest first: defaults, config file, --set, --seed/--threads,
/// subcommand kind. A report.json is accepted as a config file (its embedded
/// config is used). Throws FormatError/PreconditionError on invalid input.
RunConfig parse_config(const CliOptions& options, const EnvLookup& env = system_env);

/// Runs the experiment and writes report.json, curve CSVs and checkpoints
/// into the output directory. Returns the process exit status.
int run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace tunnelscope::cli
