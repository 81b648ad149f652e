#include "model/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>

#include "core/error.hpp"
#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "core/rng.hpp"
#include "core/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vton::model {

json config_to_json(const ModelConfig& c) {
    return json{{"base_channels", c.base_channels},
                {"channel_multipliers", c.channel_multipliers},
                {"num_dit_blocks", c.num_dit_blocks},
                {"attention_heads", c.attention_heads},
                {"pose_channels", c.pose_channels},
                {"temporal_enabled", c.temporal_enabled},
                {"temporal_resampling_enabled", c.temporal_resampling_enabled},
                {"frame_length", c.frame_length},
                {"prediction_target", to_string(c.prediction_target)}};
}

ModelConfig config_from_json(const json& j) {
    check_exact_keys(j,
                     {"base_channels", "channel_multipliers", "num_dit_blocks", "attention_heads",
                      "pose_channels", "temporal_enabled", "temporal_resampling_enabled",
                      "frame_length", "prediction_target"},
                     "model config");
    ModelConfig c;
    try {
        c.base_channels = j.at("base_channels").get<int64_t>();
        c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int64_t>>();
        c.num_dit_blocks = j.at("num_dit_blocks").get<int64_t>();
        c.attention_heads = j.at("attention_heads").get<int64_t>();
        c.pose_channels = j.at("pose_channels").get<int64_t>();
        c.temporal_enabled = j.at("temporal_enabled").get<bool>();
        c.temporal_resampling_enabled = j.at("temporal_resampling_enabled").get<bool>();
        c.frame_length = j.at("frame_length").get<int64_t>();
        c.prediction_target = prediction_target_from_string(j.at("prediction_target").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

json conditioning_to_json(const ConditioningSpec& s) {
    return json{{"image_channels", s.image_channels},
                {"agnostic_channels", s.agnostic_channels},
                {"garment_channels", s.garment_channels},
                {"pose_channels", s.pose_channels}};
}

ConditioningSpec conditioning_from_json(const json& j) {
    check_exact_keys(j, {"image_channels", "agnostic_channels", "garment_channels", "pose_channels"},
                     "conditioning spec");
    ConditioningSpec s;
    try {
        s.image_channels = j.at("image_channels").get<int64_t>();
        s.agnostic_channels = j.at("agnostic_channels").get<int64_t>();
        s.garment_channels = j.at("garment_channels").get<int64_t>();
        s.pose_channels = j.at("pose_channels").get<int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("conditioning spec: ") + e.what());
    }
    return s;
}

void save_checkpoint(const TryOnDenoiser& m, const std::string& dir, const std::string& phase,
                     const std::function<void(const std::string&)>& extra) {
    const std::string tmp = dir + ".tmp";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + tmp + ": " + ec.message());

    json groups = json::array();
    for (nn::ParamGroup g : nn::kAllParamGroups) {
        auto members = m.params.in_group(g);
        Tensor flat = Tensor::zeros({m.params.group_numel(g)});
        json inventory = json::array();
        int64_t off = 0;
        for (const auto& p : members) {
            const Tensor& v = p->var->value;
            std::memcpy(flat.data() + off, v.data(), size_t(v.numel()) * sizeof(double));
            off += v.numel();
            inventory.push_back(json{{"name", p->name}, {"shape", v.shape()}});
        }
        const std::string file = nn::group_name(g) + ".npy";
        npy::save(tmp + "/" + file, flat);
        groups.push_back(json{{"name", nn::group_name(g)}, {"file", file}, {"params", inventory}});
    }

    json manifest{{"format_version", kFormatVersion},
                  {"phase", phase},
                  {"seed", m.seed},
                  {"config", config_to_json(m.config)},
                  {"conditioning", conditioning_to_json(m.cond_spec)},
                  {"groups", groups}};
    write_json_file(tmp + "/manifest.json", manifest);
    if (extra) extra(tmp);

    fs::remove_all(dir, ec);
    fs::rename(tmp, dir, ec);
    if (ec) throw IoError("cannot commit checkpoint to " + dir + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const json manifest = read_json_file(dir + "/manifest.json");
    check_format_version(manifest, dir + "/manifest.json");

    LoadedCheckpoint out;
    try {
        out.phase = manifest.at("phase").get<std::string>();
        out.model = build_model(config_from_json(manifest.at("config")),
                                conditioning_from_json(manifest.at("conditioning")),
                                manifest.at("seed").get<uint64_t>());
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + dir + ": " + e.what());
    }

    try {
        const json& groups = manifest.at("groups");
        if (!groups.is_array() || groups.size() != size_t(nn::kNumParamGroups))
            throw IoError("checkpoint manifest must list every parameter group");
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            const nn::ParamGroup g = nn::kAllParamGroups[gi];
            const json& entry = groups[gi];
            if (entry.at("name") != nn::group_name(g))
                throw IoError("checkpoint group order mismatch: expected " + nn::group_name(g));
            auto members = out.model.params.in_group(g);
            const json& inv = entry.at("params");
            if (!inv.is_array() || inv.size() != members.size())
                throw IoError("checkpoint inventory mismatch for group " + nn::group_name(g));
            const Tensor flat = npy::load(dir + "/" + entry.at("file").get<std::string>());
            int64_t off = 0;
            for (size_t i = 0; i < members.size(); ++i) {
                const auto& p = members[i];
                if (inv[i].at("name") != p->name)
                    throw IoError("checkpoint inventory mismatch: expected parameter " + p->name);
                if (inv[i].at("shape").get<Shape>() != p->var->value.shape())
                    throw IoError("checkpoint parameter shape mismatch: " + p->name);
                const int64_t n = p->var->value.numel();
                if (off + n > flat.numel())
                    throw IoError("checkpoint container too small for group " + nn::group_name(g));
                std::memcpy(p->var->value.data(), flat.data() + off, size_t(n) * sizeof(double));
                off += n;
            }
            if (off != flat.numel())
                throw IoError("checkpoint container size mismatch for group " + nn::group_name(g));
        }
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint manifest in " + dir + ": " + e.what());
    }
    return out;
}

uint64_t checkpoint_hash(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    uint64_t h = 0x636b7074;  // arbitrary fixed seed
    for (const auto& n : names) {
        h = Rng::hash_combine(h, npy::fnv1a_bytes(n.data(), n.size()));
        h = Rng::hash_combine(h, npy::fnv1a_file(dir + "/" + n));
    }
    return h;
}

}  // namespace vton::model
