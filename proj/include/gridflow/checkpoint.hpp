#pragma once

#include "gridflow/policy.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace gridflow {

// Binary checkpoint layout (little-endian):
//   "GFP1" | u32 layer count L | (L + 1) x u32 widths |
//   per layer: f64 weights (row-major), f64 biases | f64 log_std
inline constexpr std::string_view kCheckpointMagic = "GFP1";

std::string serialize_policy(const Policy& policy);

/// Throws FormatError with the byte offset of the first bad field.
Policy deserialize_policy(std::string_view bytes);

void save_policy(const Policy& policy, const std::filesystem::path& path);
Policy load_policy(const std::filesystem::path& path);

}  // namespace gridflow
