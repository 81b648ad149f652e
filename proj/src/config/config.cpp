#include "config/config.hpp"

#include <string>

#include "core/error.hpp"
#include "core/jsonio.hpp"
#include "core/version.hpp"
#include "model/checkpoint.hpp"

using nlohmann::json;

namespace vton::config {

namespace {

int64_t get_i64(const json& j, const char* key, const std::string& what) {
    try {
        return j.at(key).get<int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
}

double get_f64(const json& j, const char* key, const std::string& what) {
    try {
        return j.at(key).get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
}

bool get_bool(const json& j, const char* key, const std::string& what) {
    try {
        return j.at(key).get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
}

std::string get_str(const json& j, const char* key, const std::string& what) {
    try {
        return j.at(key).get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(what + "." + key + ": " + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    plan.validate();
    train.optimizer.validate();

    if (conditioning.image_channels < 1 || conditioning.agnostic_channels < 1 ||
        conditioning.garment_channels < 1 || conditioning.pose_channels < 1)
        throw ConfigError("conditioning: all channel counts must be >= 1");
    if (model.pose_channels != conditioning.pose_channels)
        throw ConfigError("model.pose_channels (" + std::to_string(model.pose_channels) +
                          ") must match conditioning.pose_channels (" +
                          std::to_string(conditioning.pose_channels) + ")");

    if (schedule_steps < 1) throw ConfigError("schedule.num_steps must be >= 1");
    if (train.dropout_rate < 0.0 || train.dropout_rate > 1.0)
        throw ConfigError("train.dropout_rate must lie in [0, 1]");

    if (sampler.num_steps < 1 || sampler.num_steps > schedule_steps)
        throw ConfigError("sampler.num_steps must lie in [1, schedule.num_steps]");

    if (data.num_scenes < 0) throw ConfigError("data.num_scenes must be >= 0");
    if (data.frames_per_scene < 1) throw ConfigError("data.frames_per_scene must be >= 1");
    if (data.height < 4 || data.width < 4)
        throw ConfigError("data.height/width must be >= 4");
    const int64_t divisor = int64_t(1) << (model.levels() - 1);
    if (data.height % divisor != 0 || data.width % divisor != 0)
        throw ConfigError("data.height and data.width must be divisible by " +
                          std::to_string(divisor) + " (one halving per resolution level)");

    for (const auto& phase : plan.phases)
        if (phase.frame_length > data.frames_per_scene)
            throw ConfigError("plan phase '" + phase.name + "' needs clips of " +
                              std::to_string(phase.frame_length) + " frames but scenes have only " +
                              std::to_string(data.frames_per_scene));

    if (eval.num_pairs < 1) throw ConfigError("eval.num_pairs must be >= 1");
    if (data.num_scenes > 0) {
        if (data.num_scenes < 2)
            throw ConfigError("eval pairing needs >= 2 scenes so garments come from a different scene");
        if (eval.num_pairs > data.num_scenes)
            throw ConfigError("eval.num_pairs must not exceed data.num_scenes");
    }
    if (eval.frames < 1 || eval.frames > data.frames_per_scene)
        throw ConfigError("eval.frames must lie in [1, data.frames_per_scene]");
    if (eval.sample_steps < 1 || eval.sample_steps > schedule_steps)
        throw ConfigError("eval.sample_steps must lie in [1, schedule.num_steps]");
    if (eval.feature_dim < 2)
        throw ConfigError("eval.feature_dim must be >= 2 (video features split into two branches)");
    if (eval.segment_tolerance <= 0.0) throw ConfigError("eval.segment_tolerance must be > 0");
}

vton::train::TrainSetup RunConfig::train_setup() const {
    vton::train::TrainSetup setup;
    setup.model = model;
    setup.cond = conditioning;
    setup.schedule_kind = schedule_kind;
    setup.schedule_steps = schedule_steps;
    setup.opt = train.optimizer;
    setup.dropout_rate = train.dropout_rate;
    setup.seed = seed;
    return setup;
}

RunConfig desk_default_config() {
    RunConfig c;
    c.model.base_channels = 8;
    c.model.channel_multipliers = {1, 2};
    c.model.num_dit_blocks = 2;
    c.model.attention_heads = 2;
    c.model.prediction_target = model::PredictionTarget::Epsilon;
    c.schedule_kind = diffusion::ScheduleKind::Cosine;
    c.schedule_steps = 50;
    c.plan = vton::train::desk_default_plan();
    c.sampler.num_steps = 50;
    c.data = DataParams{};  // 6 scenes x 64 frames at 32x24
    c.eval = EvalParams{};
    c.seed = 0;
    return c;
}

json run_config_to_json(const RunConfig& c) {
    json phases = json::array();
    for (const auto& p : c.plan.phases)
        phases.push_back({{"name", p.name},
                          {"frame_length", p.frame_length},
                          {"iterations", p.iterations},
                          {"batch_size", p.batch_size},
                          {"image_fraction", p.image_fraction},
                          {"inflate_temporal", p.inflate_temporal},
                          {"inject_resampling", p.inject_resampling}});
    return json{
        {"format_version", kFormatVersion},
        {"seed", c.seed},
        {"model", model::config_to_json(c.model)},
        {"conditioning", model::conditioning_to_json(c.conditioning)},
        {"schedule", {{"num_steps", c.schedule_steps}, {"kind", to_string(c.schedule_kind)}}},
        {"train",
         {{"optimizer",
           {{"kind", c.train.optimizer.kind},
            {"lr_start", c.train.optimizer.lr_start},
            {"lr_end", c.train.optimizer.lr_end},
            {"decay_steps", c.train.optimizer.decay_steps},
            {"warmup_steps", c.train.optimizer.warmup_steps},
            {"beta1", c.train.optimizer.beta1},
            {"beta2", c.train.optimizer.beta2},
            {"eps", c.train.optimizer.eps}}},
          {"dropout_rate", c.train.dropout_rate}}},
        {"plan", {{"phases", phases}}},
        {"sampler",
         {{"num_steps", c.sampler.num_steps},
          {"cfg_weights", c.sampler.cfg_weights},
          {"clip_per_step", c.sampler.clip_per_step}}},
        {"data",
         {{"num_scenes", c.data.num_scenes},
          {"frames_per_scene", c.data.frames_per_scene},
          {"height", c.data.height},
          {"width", c.data.width}}},
        {"eval",
         {{"num_pairs", c.eval.num_pairs},
          {"frames", c.eval.frames},
          {"sample_steps", c.eval.sample_steps},
          {"feature_dim", c.eval.feature_dim},
          {"segment_tolerance", c.eval.segment_tolerance}}},
    };
}

RunConfig run_config_from_json(const json& j) {
    check_exact_keys(j,
                     {"format_version", "seed", "model", "conditioning", "schedule", "train",
                      "plan", "sampler", "data", "eval"},
                     "run config");
    if (j.at("format_version") != kFormatVersion)
        throw ConfigError("run config: unsupported format_version (expected \"" +
                          std::string(kFormatVersion) + "\")");

    RunConfig c;
    try {
        c.seed = j.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config.seed: ") + e.what());
    }
    c.model = model::config_from_json(j.at("model"));
    c.conditioning = model::conditioning_from_json(j.at("conditioning"));

    const json& sched = j.at("schedule");
    check_exact_keys(sched, {"num_steps", "kind"}, "run config.schedule");
    c.schedule_steps = get_i64(sched, "num_steps", "schedule");
    c.schedule_kind = diffusion::schedule_kind_from_string(get_str(sched, "kind", "schedule"));

    const json& tr = j.at("train");
    check_exact_keys(tr, {"optimizer", "dropout_rate"}, "run config.train");
    const json& opt = tr.at("optimizer");
    check_exact_keys(
        opt, {"kind", "lr_start", "lr_end", "decay_steps", "warmup_steps", "beta1", "beta2", "eps"},
        "run config.train.optimizer");
    c.train.optimizer.kind = get_str(opt, "kind", "train.optimizer");
    c.train.optimizer.lr_start = get_f64(opt, "lr_start", "train.optimizer");
    c.train.optimizer.lr_end = get_f64(opt, "lr_end", "train.optimizer");
    c.train.optimizer.decay_steps = get_i64(opt, "decay_steps", "train.optimizer");
    c.train.optimizer.warmup_steps = get_i64(opt, "warmup_steps", "train.optimizer");
    c.train.optimizer.beta1 = get_f64(opt, "beta1", "train.optimizer");
    c.train.optimizer.beta2 = get_f64(opt, "beta2", "train.optimizer");
    c.train.optimizer.eps = get_f64(opt, "eps", "train.optimizer");
    c.train.dropout_rate = get_f64(tr, "dropout_rate", "train");

    const json& plan = j.at("plan");
    check_exact_keys(plan, {"phases"}, "run config.plan");
    if (!plan.at("phases").is_array()) throw ConfigError("run config.plan.phases must be an array");
    for (const json& p : plan.at("phases")) {
        check_exact_keys(p,
                         {"name", "frame_length", "iterations", "batch_size", "image_fraction",
                          "inflate_temporal", "inject_resampling"},
                         "run config.plan.phases entry");
        vton::train::PhaseSpec spec;
        spec.name = get_str(p, "name", "plan.phase");
        spec.frame_length = get_i64(p, "frame_length", "plan.phase");
        spec.iterations = get_i64(p, "iterations", "plan.phase");
        spec.batch_size = get_i64(p, "batch_size", "plan.phase");
        spec.image_fraction = get_f64(p, "image_fraction", "plan.phase");
        spec.inflate_temporal = get_bool(p, "inflate_temporal", "plan.phase");
        spec.inject_resampling = get_bool(p, "inject_resampling", "plan.phase");
        c.plan.phases.push_back(std::move(spec));
    }

    const json& sam = j.at("sampler");
    check_exact_keys(sam, {"num_steps", "cfg_weights", "clip_per_step"}, "run config.sampler");
    c.sampler.num_steps = get_i64(sam, "num_steps", "sampler");
    const json& w = sam.at("cfg_weights");
    if (!w.is_array() || w.size() != 4)
        throw ConfigError("sampler.cfg_weights must be an array of exactly 4 numbers");
    for (size_t i = 0; i < 4; ++i) {
        if (!w[i].is_number()) throw ConfigError("sampler.cfg_weights must be numeric");
        c.sampler.cfg_weights[i] = w[i].get<double>();
    }
    c.sampler.clip_per_step = get_bool(sam, "clip_per_step", "sampler");

    const json& data = j.at("data");
    check_exact_keys(data, {"num_scenes", "frames_per_scene", "height", "width"},
                     "run config.data");
    c.data.num_scenes = get_i64(data, "num_scenes", "data");
    c.data.frames_per_scene = get_i64(data, "frames_per_scene", "data");
    c.data.height = get_i64(data, "height", "data");
    c.data.width = get_i64(data, "width", "data");

    const json& ev = j.at("eval");
    check_exact_keys(ev, {"num_pairs", "frames", "sample_steps", "feature_dim", "segment_tolerance"},
                     "run config.eval");
    c.eval.num_pairs = get_i64(ev, "num_pairs", "eval");
    c.eval.frames = get_i64(ev, "frames", "eval");
    c.eval.sample_steps = get_i64(ev, "sample_steps", "eval");
    c.eval.feature_dim = get_i64(ev, "feature_dim", "eval");
    c.eval.segment_tolerance = get_f64(ev, "segment_tolerance", "eval");

    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from_json(read_json_file(path));
}

void save_run_config(const std::string& path, const RunConfig& c) {
    write_json_file(path, run_config_to_json(c));
}

}  // namespace vton::config
