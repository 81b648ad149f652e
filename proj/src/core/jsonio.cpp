#include "core/jsonio.hpp"

#include <algorithm>
#include <fstream>

#include "core/error.hpp"
#include "core/version.hpp"

using nlohmann::json;

namespace vton {

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
    if (!f.good()) throw IoError("failed writing " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

void check_format_version(const json& j, const std::string& what) {
    if (!j.contains("format_version") || j["format_version"] != kFormatVersion)
        throw IoError("unsupported format_version in " + what);
}

void check_exact_keys(const json& j, const std::vector<std::string>& keys,
                      const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
    for (const auto& k : keys)
        if (!j.contains(k)) throw ConfigError(what + ": missing key \"" + k + "\"");
    for (const auto& [k, v] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw ConfigError(what + ": unknown key \"" + k + "\"");
}

}  // namespace vton
