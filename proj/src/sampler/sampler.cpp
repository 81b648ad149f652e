#include "sampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "core/version.hpp"
#include "nn/autodiff.hpp"

namespace vton::sampler {

namespace fs = std::filesystem;

void SamplerConfig::validate(const diffusion::DiffusionSchedule& sched) const {
    if (num_steps < 1)
        throw InvalidArgument("sampler num_steps must be >= 1, got " + std::to_string(num_steps));
    if (num_steps > sched.num_steps)
        throw InvalidArgument("sampler num_steps " + std::to_string(num_steps) +
                              " exceeds the schedule's " + std::to_string(sched.num_steps));
    guidance.validate();
}

namespace {

void check_latent_shape(const Shape& shape) {
    if (shape.size() != 5)
        throw InvalidArgument("ddpm_sample: expected a 5-D (B,T,H,W,C) shape, got " + shape_str(shape));
    for (int64_t d : shape)
        if (d < 1)
            throw InvalidArgument("ddpm_sample: all axis lengths must be >= 1, got " + shape_str(shape));
}

void clamp_unit(Tensor& t) {
    for (auto& x : t.vec()) x = std::clamp(x, -1.0, 1.0);
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
    return s / double(a.numel());
}

}  // namespace

Tensor ddpm_sample(const guidance::DenoiserFn& denoiser, const data::TryOnConditioning& cond,
                   const Shape& shape, const SamplerConfig& cfg,
                   const diffusion::DiffusionSchedule& sched, SampleTrace* trace) {
    cfg.validate(sched);
    check_latent_shape(shape);
    if (trace) trace->x0_change.clear();

    Rng root(cfg.seed);
    Rng init_rng = root.split("sample.init");
    Rng noise_rng = root.split("sample.noise");

    Tensor z = Tensor::randn(shape, init_rng);
    const auto batch = size_t(shape[0]);
    Tensor prev_x0;

    for (int64_t t = cfg.num_steps - 1; t >= 0; --t) {
        const std::vector<int64_t> tvec(batch, t);
        const Tensor pred = guidance::split_cfg(denoiser, z, tvec, cond, cfg.guidance);
        if (!pred.same_shape(z))
            throw InvalidArgument("ddpm_sample: denoiser output shape " + shape_str(pred.shape()) +
                                  " does not match latent shape " + shape_str(z.shape()));

        Tensor x0 = cfg.prediction_target == model::PredictionTarget::V
                        ? diffusion::x0_from_v(z, pred, t, sched)
                        : diffusion::x0_from_eps(z, pred, t, sched);
        if (cfg.clip_per_step) clamp_unit(x0);
        if (trace && prev_x0.numel() > 0) trace->x0_change.push_back(mean_abs_diff(x0, prev_x0));

        if (t == 0) {
            // The final posterior collapses onto the clean estimate: the
            // previous signal level is total, so no noise remains to add.
            z = std::move(x0);
            break;
        }

        // Forward-process posterior q(z_{t-1} | z_t, x0) in cumulative-signal
        // terms: abar_t = alpha[t]^2, per-step fraction kept = abar_t/abar_p,
        // mean = c0*x0 + cz*z_t, and the small (beta-tilde) variance.
        const double abar_t = sched.alpha(t) * sched.alpha(t);
        const double abar_p = sched.alpha(t - 1) * sched.alpha(t - 1);
        const double step_alpha = abar_t / abar_p;
        const double beta = 1.0 - step_alpha;
        const double c0 = std::sqrt(abar_p) * beta / (1.0 - abar_t);
        const double cz = std::sqrt(step_alpha) * (1.0 - abar_p) / (1.0 - abar_t);
        const double var = beta * (1.0 - abar_p) / (1.0 - abar_t);
        const double sd = std::sqrt(std::max(var, 0.0));

        for (int64_t i = 0; i < z.numel(); ++i)
            z[i] = c0 * x0[i] + cz * z[i] + sd * noise_rng.normal();
        prev_x0 = std::move(x0);
    }

    clamp_unit(z);
    return z;
}

Tensor ddpm_sample(const model::TryOnDenoiser& m, const data::TryOnConditioning& cond,
                   const Shape& shape, const SamplerConfig& cfg,
                   const diffusion::DiffusionSchedule& sched, SampleTrace* trace) {
    if (cfg.prediction_target != m.config.prediction_target)
        throw InvalidArgument("sampler prediction target '" + model::to_string(cfg.prediction_target) +
                              "' does not match the model's '" +
                              model::to_string(m.config.prediction_target) + "'");
    const model::Branch branch =
        m.config.temporal_enabled ? model::Branch::Video : model::Branch::Image;
    const guidance::DenoiserFn fn = [&m, branch](const Tensor& z, const std::vector<int64_t>& t,
                                                 const data::TryOnConditioning& c) {
        nn::NoGradGuard no_grad;
        return model::forward(m, nn::constant(z), t, c, branch)->value;
    };
    return ddpm_sample(fn, cond, shape, cfg, sched, trace);
}

void save_video(const std::string& path, const Tensor& video) {
    video::check(video, "save_video");
    npy::save(path, video);
}

void write_frame_dir(const std::string& dir, const Tensor& video, int64_t batch) {
    video::check(video, "write_frame_dir");
    if (video::channels(video) != 3)
        throw InvalidArgument("write_frame_dir: expected 3 channels, got " +
                              std::to_string(video::channels(video)));
    if (batch < 0 || batch >= video::batch(video))
        throw InvalidArgument("write_frame_dir: batch index " + std::to_string(batch) +
                              " out of range for " + shape_str(video.shape()));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create frame directory " + dir + ": " + ec.message());

    const int64_t frames = video::frames(video);
    const int64_t h = video::height(video);
    const int64_t w = video::width(video);
    for (int64_t t = 0; t < frames; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04lld.ppm", static_cast<long long>(t));
        const std::string path = dir + "/" + name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        out << "P6\n" << w << " " << h << "\n255\n";
        std::string row;
        row.reserve(size_t(w) * 3);
        for (int64_t y = 0; y < h; ++y) {
            row.clear();
            for (int64_t x = 0; x < w; ++x)
                for (int64_t c = 0; c < 3; ++c) {
                    const double v = std::clamp(video.at5(batch, t, y, x, c), -1.0, 1.0);
                    row.push_back(char(uint8_t(std::lround((v + 1.0) * 0.5 * 255.0))));
                }
            out.write(row.data(), std::streamsize(row.size()));
        }
        if (!out) throw IoError("failed while writing " + path);
    }
}

void write_run_metadata(const std::string& path, const SamplerConfig& cfg,
                        uint64_t checkpoint_hash) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["seed"] = cfg.seed;
    j["weights"] = cfg.guidance.weights;
    j["num_steps"] = cfg.num_steps;
    j["checkpoint_hash"] = checkpoint_hash;
    write_json_file(path, j);
}

}  // namespace vton::sampler
