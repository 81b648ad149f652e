#include "vton/vton.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "config/config.hpp"
#include "core/error.hpp"
#include "data/dataset.hpp"
#include "data/synthetic.hpp"
#include "diffusion/schedule.hpp"
#include "eval/eval.hpp"
#include "model/checkpoint.hpp"
#include "sampler/sampler.hpp"
#include "train/train.hpp"

using nlohmann::json;

struct vton_config {
    vton::config::RunConfig cfg;
};

struct vton_model {
    vton::model::LoadedCheckpoint lc;
    uint64_t hash = 0;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
vton_status guarded(F&& body) noexcept {
    try {
        body();
        g_last_error.clear();
        return VTON_OK;
    } catch (const vton::InvalidArgument& e) {
        g_last_error = e.what();
        return VTON_ERR_INVALID_ARGUMENT;
    } catch (const vton::InvalidState& e) {
        g_last_error = e.what();
        return VTON_ERR_INVALID_STATE;
    } catch (const vton::ConfigError& e) {
        g_last_error = e.what();
        return VTON_ERR_CONFIG;
    } catch (const vton::IoError& e) {
        g_last_error = e.what();
        return VTON_ERR_IO;
    } catch (const vton::NumericError& e) {
        g_last_error = e.what();
        return VTON_ERR_NUMERIC;
    } catch (const vton::TrainingDivergence& e) {
        g_last_error = e.what();
        return VTON_ERR_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return VTON_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return VTON_ERR_INTERNAL;
    }
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw vton::InvalidArgument(msg);
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

extern "C" {

const char* vton_status_name(vton_status status) {
    switch (status) {
        case VTON_OK: return "VTON_OK";
        case VTON_ERR_INVALID_ARGUMENT: return "VTON_ERR_INVALID_ARGUMENT";
        case VTON_ERR_INVALID_STATE: return "VTON_ERR_INVALID_STATE";
        case VTON_ERR_IO: return "VTON_ERR_IO";
        case VTON_ERR_CONFIG: return "VTON_ERR_CONFIG";
        case VTON_ERR_NUMERIC: return "VTON_ERR_NUMERIC";
        case VTON_ERR_INTERNAL: return "VTON_ERR_INTERNAL";
    }
    return "VTON_ERR_INTERNAL";
}

const char* vton_last_error(void) { return g_last_error.c_str(); }

const char* vton_version(void) { return "0.1.0"; }

void vton_string_free(char* s) { std::free(s); }

/* ---- configuration ---- */

vton_status vton_config_load(const char* path, vton_config** out) {
    return guarded([&] {
        require(path != nullptr, "vton_config_load: path is NULL");
        require(out != nullptr, "vton_config_load: out is NULL");
        auto handle = std::make_unique<vton_config>();
        handle->cfg = vton::config::load_run_config(path);
        *out = handle.release();
    });
}

vton_status vton_config_default(vton_config** out) {
    return guarded([&] {
        require(out != nullptr, "vton_config_default: out is NULL");
        auto handle = std::make_unique<vton_config>();
        handle->cfg = vton::config::desk_default_config();
        handle->cfg.validate();
        *out = handle.release();
    });
}

vton_status vton_config_json(const vton_config* cfg, char** out_json) {
    return guarded([&] {
        require(cfg != nullptr, "vton_config_json: cfg is NULL");
        require(out_json != nullptr, "vton_config_json: out_json is NULL");
        *out_json = dup_string(vton::config::run_config_to_json(cfg->cfg).dump(2));
    });
}

void vton_config_free(vton_config* cfg) { delete cfg; }

/* ---- checkpoints ---- */

vton_status vton_model_open(const char* checkpoint_dir, vton_model** out) {
    return guarded([&] {
        require(checkpoint_dir != nullptr, "vton_model_open: checkpoint_dir is NULL");
        require(out != nullptr, "vton_model_open: out is NULL");
        auto handle = std::make_unique<vton_model>();
        handle->lc = vton::model::load_checkpoint(checkpoint_dir);
        handle->hash = vton::model::checkpoint_hash(checkpoint_dir);
        *out = handle.release();
    });
}

vton_status vton_model_info(const vton_model* m, char** out_json) {
    return guarded([&] {
        require(m != nullptr, "vton_model_info: model is NULL");
        require(out_json != nullptr, "vton_model_info: out_json is NULL");
        const vton::model::ModelConfig& c = m->lc.model.config;
        const json j = {{"phase", m->lc.phase},
                        {"frame_length", c.frame_length},
                        {"temporal", c.temporal_enabled},
                        {"temporal_resampling", c.temporal_resampling_enabled},
                        {"prediction_target", vton::model::to_string(c.prediction_target)},
                        {"checkpoint_hash", hex64(m->hash)}};
        *out_json = dup_string(j.dump(2));
    });
}

void vton_model_close(vton_model* m) { delete m; }

/* ---- pipeline commands ---- */

vton_status vton_generate_data(const vton_config* cfg, const char* out_dir, int64_t num_scenes,
                               int64_t seed, int32_t workers, char** out_summary_json) {
    return guarded([&] {
        require(cfg != nullptr, "vton_generate_data: cfg is NULL");
        require(out_dir != nullptr, "vton_generate_data: out_dir is NULL");
        require(workers >= 1, "vton_generate_data: workers must be >= 1");
        const auto& d = cfg->cfg.data;
        const int64_t n = num_scenes >= 0 ? num_scenes : d.num_scenes;
        const uint64_t s = seed >= 0 ? uint64_t(seed) : cfg->cfg.seed;
        const auto meta = vton::data::generate_dataset(out_dir, n, d.frames_per_scene, d.height,
                                                       d.width, s, workers);
        if (out_summary_json) {
            const json j = {{"num_scenes", meta.num_scenes},
                            {"frames", meta.T},
                            {"height", meta.H},
                            {"width", meta.W},
                            {"seed", meta.seed}};
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

vton_status vton_train(const vton_config* cfg, const char* data_dir, const char* out_dir,
                       const char* phase, const char* resume_checkpoint,
                       char** out_checkpoints_json) {
    return guarded([&] {
        require(cfg != nullptr, "vton_train: cfg is NULL");
        require(data_dir != nullptr, "vton_train: data_dir is NULL");
        require(out_dir != nullptr, "vton_train: out_dir is NULL");

        vton::train::PhasePlan plan = cfg->cfg.plan;
        if (phase && *phase) {
            size_t idx = plan.phases.size();
            for (size_t i = 0; i < plan.phases.size(); ++i)
                if (plan.phases[i].name == phase) idx = i;
            require(idx < plan.phases.size(),
                    std::string("vton_train: no phase named '") + phase + "' in the plan");
            if (idx > 0 && !(resume_checkpoint && *resume_checkpoint))
                throw vton::InvalidArgument(
                    std::string("vton_train: phase '") + phase +
                    "' is not the first phase; pass the preceding checkpoint to resume from");
            plan.phases.resize(idx + 1);  // earlier phases are skipped via resume
        }

        const auto scenes = vton::data::load_dataset(data_dir);
        const auto written =
            vton::train::run_progressive(plan, cfg->cfg.train_setup(), scenes, out_dir,
                                         resume_checkpoint ? resume_checkpoint : "");
        if (out_checkpoints_json) *out_checkpoints_json = dup_string(json(written).dump(2));
    });
}

vton_status vton_sample(const vton_model* m, const char* data_dir, int64_t person_scene,
                        int64_t garment_scene, int64_t garment_frame, int64_t frames,
                        const double weights[4], int64_t steps, uint64_t seed,
                        const char* out_dir) {
    return guarded([&] {
        require(m != nullptr, "vton_sample: model is NULL");
        require(data_dir != nullptr, "vton_sample: data_dir is NULL");
        require(out_dir != nullptr, "vton_sample: out_dir is NULL");
        require(frames >= 1, "vton_sample: frames must be >= 1");

        const vton::model::ModelConfig& mc = m->lc.model.config;
        if (mc.temporal_resampling_enabled && frames % 2 != 0)
            throw vton::InvalidArgument(
                "vton_sample: frame count " + std::to_string(frames) +
                " is odd; temporal resampling halves the time axis, so even counts are required");
        if (mc.temporal_enabled && frames != mc.frame_length) {
            const std::string needed =
                frames == 1 ? "image" : "temporal_" + std::to_string(frames);
            throw vton::InvalidState(
                "vton_sample: this checkpoint processes clips of " +
                std::to_string(mc.frame_length) + " frames (phase '" + m->lc.phase +
                "'); sampling " + std::to_string(frames) +
                " frames requires a checkpoint from phase '" + needed + "'");
        }

        const auto meta = vton::data::load_dataset_meta(data_dir);
        require(person_scene >= 0 && person_scene < meta.num_scenes,
                "vton_sample: person scene index out of range");
        require(garment_scene >= 0 && garment_scene < meta.num_scenes,
                "vton_sample: garment scene index out of range");
        const auto person = vton::data::load_scene(
            std::string(data_dir) + "/" + meta.scene_dirs[size_t(person_scene)]);
        const auto garment = vton::data::load_scene(
            std::string(data_dir) + "/" + meta.scene_dirs[size_t(garment_scene)]);
        require(garment_frame >= 0 && garment_frame < garment.T,
                "vton_sample: garment frame index out of range");
        require(frames <= person.T, "vton_sample: person scene has only " +
                                        std::to_string(person.T) + " frames");

        const auto ex = vton::data::make_example(person, 0, frames, garment, garment_frame);

        vton::sampler::SamplerConfig scfg;
        scfg.num_steps = steps > 0 ? steps : 1000;
        scfg.seed = seed;
        scfg.prediction_target = mc.prediction_target;
        if (weights)
            scfg.guidance = vton::guidance::make_tryon_schedule(weights[0], weights[1], weights[2],
                                                                weights[3]);
        const auto sched =
            vton::diffusion::make_schedule(scfg.num_steps, vton::diffusion::ScheduleKind::Cosine);

        const vton::Tensor video = vton::sampler::ddpm_sample(
            m->lc.model, ex.cond, vton::Shape{1, frames, person.H, person.W, 3}, scfg, sched);

        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec)
            throw vton::IoError("vton_sample: cannot create " + std::string(out_dir) + ": " +
                                ec.message());
        vton::sampler::save_video(std::string(out_dir) + "/video.npy", video);
        vton::sampler::write_frame_dir(std::string(out_dir) + "/frames", video);
        vton::sampler::write_run_metadata(std::string(out_dir) + "/metadata.json", scfg, m->hash);
    });
}

vton_status vton_evaluate(const vton_config* cfg, const char* const* checkpoint_dirs,
                          size_t num_checkpoints, const char* data_dir,
                          const char* out_json_path, const char* out_text_path, int32_t workers) {
    return guarded([&] {
        require(checkpoint_dirs != nullptr || num_checkpoints == 0,
                "vton_evaluate: checkpoint_dirs is NULL");
        require(num_checkpoints >= 1, "vton_evaluate: need at least one checkpoint");
        require(data_dir != nullptr, "vton_evaluate: data_dir is NULL");
        require(out_json_path != nullptr, "vton_evaluate: out_json_path is NULL");
        require(out_text_path != nullptr, "vton_evaluate: out_text_path is NULL");
        require(workers >= 1, "vton_evaluate: workers must be >= 1");

        const vton::config::RunConfig run =
            cfg ? cfg->cfg : vton::config::desk_default_config();
        vton::eval::AblationConfig ac;
        ac.num_pairs = run.eval.num_pairs;
        ac.frames = run.eval.frames;
        ac.sample_steps = run.eval.sample_steps;
        ac.schedule_steps = run.schedule_steps;
        ac.schedule_kind = run.schedule_kind;
        ac.cfg_weights = run.sampler.cfg_weights;
        ac.seed = run.seed;
        ac.feature_dim = run.eval.feature_dim;
        ac.segment_tolerance = run.eval.segment_tolerance;
        ac.workers = workers;

        std::vector<std::string> ckpts;
        for (size_t i = 0; i < num_checkpoints; ++i) {
            require(checkpoint_dirs[i] != nullptr, "vton_evaluate: checkpoint path is NULL");
            ckpts.emplace_back(checkpoint_dirs[i]);
        }
        const auto scenes = vton::data::load_dataset(data_dir);
        const auto result = vton::eval::run_ablation_suite(ckpts, scenes, ac);
        for (const char* path : {out_json_path, out_text_path}) {
            const auto parent = std::filesystem::path(path).parent_path();
            if (parent.empty()) continue;
            std::error_code ec;
            std::filesystem::create_directories(parent, ec);
            if (ec)
                throw vton::IoError("vton_evaluate: cannot create " + parent.string() + ": " +
                                    ec.message());
        }
        vton::eval::write_score_table(result, out_json_path, out_text_path);
    });
}

}  // extern "C"
