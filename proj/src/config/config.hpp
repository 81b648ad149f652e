#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "diffusion/schedule.hpp"
#include "model/model.hpp"
#include "train/train.hpp"

namespace vton::config {

// Sampling defaults recorded with every run; the 1000-step walk matches the
// production setting.
struct SamplerParams {
    int64_t num_steps = 1000;
    std::array<double, 4> cfg_weights = {1.0, 1.0, 1.0, 1.0};  // null, +pose, +garment, full
    bool clip_per_step = false;
};

// Synthetic dataset geometry.
struct DataParams {
    int64_t num_scenes = 6;
    int64_t frames_per_scene = 64;
    int64_t height = 32;
    int64_t width = 24;
};

// Scoring-run shape: how many person/garment pairs to sample, at what clip
// length, and the feature space the distances live in.
struct EvalParams {
    int64_t num_pairs = 2;
    int64_t frames = 8;
    int64_t sample_steps = 8;
    int64_t feature_dim = 6;
    double segment_tolerance = 0.6;
};

struct TrainParams {
    vton::train::OptimizerSpec optimizer;
    double dropout_rate = 0.1;  // independent conditioning-nulling probability
};

// One experiment end to end: architecture, diffusion schedule, training
// plan, sampling defaults, dataset geometry, and scoring setup, all under a
// single seed. Loading is fail-closed (unknown or missing keys reject the
// file) and validate() checks the pieces against each other, not just in
// isolation.
struct RunConfig {
    model::ModelConfig model;
    model::ConditioningSpec conditioning;
    diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::Cosine;
    int64_t schedule_steps = 1000;
    vton::train::PhasePlan plan;
    TrainParams train;
    SamplerParams sampler;
    DataParams data;
    EvalParams eval;
    uint64_t seed = 0;

    // Throws ConfigError (cross-module inconsistencies, named field) or the
    // submodule's own InvalidArgument.
    void validate() const;

    // The trainer's view of this config.
    vton::train::TrainSetup train_setup() const;
};

// Small-everything preset that runs in minutes on a laptop CPU; mirrors the
// production phase ladder at reduced iteration counts.
RunConfig desk_default_config();

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& c);

}  // namespace vton::config
