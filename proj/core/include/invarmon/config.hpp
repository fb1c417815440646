#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "invarmon/harness.hpp"

namespace invarmon {

/// Parses a scenario document. Unknown keys, wrong types and out-of-range
/// values raise config_error carrying the dotted field path.
scenario_config parse_config(std::string_view json_text);
scenario_config load_config(const std::filesystem::path& path);

/// Canonical JSON with every field spelled out (defaults included).
std::string config_to_json(const scenario_config& cfg, int indent = -1);

/// MD5 of the canonical JSON.
std::string config_hash(const scenario_config& cfg);

std::string report_to_json(const scenario_report& r, int indent = 2);
std::string report_to_text(const scenario_report& r);

std::string histogram_to_json(const latency_histogram& h, int indent = 2);
std::string histogram_to_text(const latency_histogram& h);

} // namespace invarmon
