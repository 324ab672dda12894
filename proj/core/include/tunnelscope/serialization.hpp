#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tunnelscope/analysis.hpp"

namespace tunnelscope {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

/// Complete config, every default spelled out.
Json config_to_json(const analysis::ExperimentConfig& cfg);

/// Strict reader: keys not in the schema are rejected, absent keys keep
/// their defaults. Errors are FormatError naming the dotted key.
analysis::ExperimentConfig config_from_json(const Json& doc);

Json to_json(const probes::ProbeCurve& curve);
Json to_json(const analysis::TunnelBoundary& boundary);
Json to_json(const analysis::TunnelReport& report);
Json to_json(const analysis::OodReport& report);
Json to_json(const analysis::StitchGrid& grid);
Json to_json(const analysis::DevelopmentReport& report);
Json to_json(const std::vector<analysis::SweepCell>& cells);
Json to_json(const analysis::ShorterReport& report);

/// `layer,value,std` rows for plotting.
void write_curve_csv(const std::filesystem::path& path, std::span<const double> values,
                     std::span<const double> stddev = {});

}  // namespace tunnelscope
