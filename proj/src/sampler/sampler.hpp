#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "data/synthetic.hpp"
#include "diffusion/schedule.hpp"
#include "guidance/guidance.hpp"
#include "model/model.hpp"

namespace vton::sampler {

// Ancestral-sampling settings. `num_steps` walks the first num_steps
// timesteps of the diffusion schedule from most to least noisy; the default
// matches the 1000-step production setting. `prediction_target` must agree
// with what the denoiser emits.
struct SamplerConfig {
    int64_t num_steps = 1000;
    uint64_t seed = 0;
    guidance::GuidanceSchedule guidance = guidance::make_tryon_schedule(1.0, 1.0, 1.0, 1.0);
    model::PredictionTarget prediction_target = model::PredictionTarget::V;
    // Clamp the intermediate clean-image estimate to [-1, 1] inside every
    // step instead of only at emission.
    bool clip_per_step = false;

    void validate(const diffusion::DiffusionSchedule& sched) const;  // throws InvalidArgument
};

// Optional instrumentation: mean |delta| between consecutive clean-image
// estimates, one entry per step after the first. Entries shrinking toward
// zero late in the run is the signature of refinement rather than jumping.
struct SampleTrace {
    std::vector<double> x0_change;
};

// DDPM ancestral sampling with split classifier-free guidance. Starts from
// seeded unit Gaussian noise of `shape` ([B,T,H,W,C]) and iterates
// t = num_steps-1 .. 0: run the guided prediction, convert it to a
// clean-image estimate, then draw the next latent from the forward-process
// posterior using the small (beta-tilde) variance. No noise is added at
// t = 0, and the result is clamped to [-1, 1] at emission only (unless
// clip_per_step). Deterministic in cfg.seed.
Tensor ddpm_sample(const guidance::DenoiserFn& denoiser, const data::TryOnConditioning& cond,
                   const Shape& shape, const SamplerConfig& cfg,
                   const diffusion::DiffusionSchedule& sched, SampleTrace* trace = nullptr);

// Convenience overload running a TryOnDenoiser without gradients: the video
// branch when the model is temporal (one network pass covers all frames of
// every step), the image branch otherwise. The config's prediction target
// must match the model's.
Tensor ddpm_sample(const model::TryOnDenoiser& m, const data::TryOnConditioning& cond,
                   const Shape& shape, const SamplerConfig& cfg,
                   const diffusion::DiffusionSchedule& sched, SampleTrace* trace = nullptr);

// ---- emission ----

// Saves the full [B,T,H,W,C] video tensor as an .npy array.
void save_video(const std::string& path, const Tensor& video);

// Writes one batch row as numbered binary PPM images (frame_0000.ppm, ...),
// mapping [-1, 1] to 8-bit via round((v + 1) / 2 * 255). Requires 3 channels.
void write_frame_dir(const std::string& dir, const Tensor& video, int64_t batch = 0);

// Run provenance as JSON: {format_version, seed, weights, num_steps,
// checkpoint_hash} — enough to reproduce the run bit-exactly against the
// same checkpoint.
void write_run_metadata(const std::string& path, const SamplerConfig& cfg,
                        uint64_t checkpoint_hash);

}  // namespace vton::sampler
