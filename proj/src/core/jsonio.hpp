#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace vton {

// Shared fail-closed JSON persistence helpers. All readers reject missing
// files, malformed JSON, and version drift up front instead of limping along
// with partial data.
void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

// Requires j["format_version"] == kFormatVersion.
void check_format_version(const nlohmann::json& j, const std::string& what);

// Requires j to be an object whose key set is exactly `keys` (no unknown
// keys, no omissions). Throws ConfigError naming the offending key.
void check_exact_keys(const nlohmann::json& j, const std::vector<std::string>& keys,
                      const std::string& what);

}  // namespace vton
