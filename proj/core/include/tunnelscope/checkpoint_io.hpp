#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tunnelscope/nn.hpp"

namespace tunnelscope::nn {

/// Binary checkpoint container:
///   "TNLC" | u32 version | u32 layer count |
///   per layer: u32 rows | u32 cols | rows*cols f32 weights | cols f32 biases
/// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_parameters(const Parameters& parameters);
Parameters decode_parameters(std::span<const std::uint8_t> bytes);

void save_parameters(const Parameters& parameters, const std::filesystem::path& path);
Parameters load_parameters(const std::filesystem::path& path);

/// Loads parameters and checks them against `spec`.
Network load_network(const NetworkSpec& spec, const std::filesystem::path& path);

}  // namespace tunnelscope::nn
