#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "data/synthetic.hpp"
#include "diffusion/schedule.hpp"
#include "model/model.hpp"

namespace vton::train {

// Adam settings plus the learning-rate schedule: linear warmup from 0 to
// lr_start over warmup_steps, linear decay to lr_end over decay_steps,
// constant afterwards. Desk defaults keep the production 100:1
// decay-to-warmup ratio at reduced scale.
struct OptimizerSpec {
    std::string kind = "adam";
    double lr_start = 1e-4;
    double lr_end = 1e-5;
    int64_t decay_steps = 10000;
    int64_t warmup_steps = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;  // throws InvalidArgument
};

double lr_at(int64_t step, const OptimizerSpec& spec);

// Adam over every parameter of one model. A parameter whose gradient was
// never allocated this step (the temporal groups on an image batch) is
// skipped outright: no moment decay, no bias-correction tick, value bitwise
// unchanged. Moment slots are keyed by parameter name so they survive model
// rebuilds (temporal inflation, resampling injection, checkpoint reloads).
class Adam {
  public:
    Adam() = default;
    Adam(const model::TryOnDenoiser& m, OptimizerSpec spec);

    // Points the optimizer at a rebuilt model, keeping slots whose name and
    // shape still match and starting fresh zeros for new parameters.
    void rebind(const model::TryOnDenoiser& m);

    // Applies one update at the given learning rate, then resets every
    // gradient to the unallocated state. Returns how many parameters were
    // updated.
    int64_t step(double lr);

    // Persistence inside a checkpoint directory (opt_m/opt_v/opt_steps.npy
    // plus opt_meta.json). load() requires the slot inventory to match the
    // currently bound model and returns the recorded global step.
    void save(const std::string& dir, int64_t global_step) const;
    int64_t load(const std::string& dir);

  private:
    struct Slot {
        Tensor m, v;
        int64_t steps = 0;
    };
    OptimizerSpec spec_;
    std::vector<std::shared_ptr<nn::Param>> params_;
    std::map<std::string, Slot> state_;
};

// One training batch. Every row is an image (T == 1) or every row is a clip
// of the phase's frame length cut as consecutive frames of a single scene;
// the two are never mixed. scene_ids/start_frames record where each row
// came from.
struct Batch {
    data::TrainingExample ex;
    bool image_batch = false;
    std::vector<int64_t> scene_ids;
    std::vector<int64_t> start_frames;
};

// Draws image-only batches with probability image_fraction and video-only
// batches otherwise. Garment inputs are taken from a random frame of the
// same scene (paired self-reconstruction). The scene vectors must outlive
// the stream; they may alias.
class JointStream {
  public:
    JointStream(const std::vector<data::SyntheticScene>* image_scenes,
                const std::vector<data::SyntheticScene>* video_scenes, int64_t frame_length,
                int64_t batch_size, double image_fraction, uint64_t seed);
    Batch next();

  private:
    const std::vector<data::SyntheticScene>* image_ = nullptr;
    const std::vector<data::SyntheticScene>* video_ = nullptr;
    std::vector<size_t> eligible_;  // video scenes long enough for a clip
    int64_t frame_length_ = 1;
    int64_t batch_size_ = 1;
    double image_fraction_ = 1.0;
    Rng rng_;
};

JointStream make_joint_stream(const std::vector<data::SyntheticScene>* image_scenes,
                              const std::vector<data::SyntheticScene>* video_scenes,
                              int64_t frame_length, int64_t batch_size, double image_fraction,
                              uint64_t seed);

// Independently nulls each of the four conditioning inputs with probability
// `rate`, drawing in the fixed order agnostic, garment, garment pose,
// person pose. This is the exact dropout applied by train_step.
data::TryOnConditioning apply_conditioning_dropout(const data::TryOnConditioning& cond,
                                                   double rate, Rng& rng);

// One optimization step: per-row uniform timestep, forward-process noising,
// conditioning dropout, squared error against the model's configured
// prediction target, backprop, Adam at the given learning rate. Image
// batches run the image branch so temporal parameters stay untouched.
// Returns the loss; throws TrainingDivergence when it is not finite.
double train_step(const model::TryOnDenoiser& m, Adam& opt, const Batch& batch,
                  const diffusion::DiffusionSchedule& sched, double dropout_rate, double lr,
                  Rng& rng);

// Deterministic denoising loss on a fixed example: timesteps and noise
// derive from `seed` alone and no dropout is applied, so two models can be
// compared on the identical problem. Runs without gradients.
double validation_loss(const model::TryOnDenoiser& m, const data::TrainingExample& ex,
                       const diffusion::DiffusionSchedule& sched, uint64_t seed,
                       model::Branch branch);

// One progressive-training phase. frame_length 1 marks an image phase;
// video phases train on clips of that many consecutive frames.
struct PhaseSpec {
    std::string name;
    int64_t frame_length = 1;
    int64_t iterations = 0;
    int64_t batch_size = 1;
    double image_fraction = 0.0;
    bool inflate_temporal = false;
    bool inject_resampling = false;
};

struct PhasePlan {
    std::vector<PhaseSpec> phases;
    // Enforces the progressive shape: an image-only first phase, clip
    // lengths from {1,8,16,32,64} doubling between consecutive video
    // phases (the first video phase may start anywhere, which is how the
    // skip-ablation is expressed), temporal inflation exactly on the first
    // video phase, and resampling injection only at 64 frames.
    void validate() const;  // throws InvalidArgument
};

// Image warmup, then video phases 8 -> 16 -> 32 -> 64 with resampling
// injected at 64. Iteration counts are desk-scale; the production-scale
// counts live in the paper_scale config preset.
PhasePlan desk_default_plan();

// Everything run_progressive needs besides the plan and the data. The model
// config describes the spatial architecture only: temporal capability and
// frame length are controlled by the plan.
struct TrainSetup {
    model::ModelConfig model;
    model::ConditioningSpec cond;
    diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::Cosine;
    int64_t schedule_steps = 1000;
    OptimizerSpec opt;
    double dropout_rate = 0.1;
    uint64_t seed = 0;
};

// Trains the plan's phases in order against `scenes` (images draw any
// frame; clips draw from scenes long enough for the phase). Each phase ends
// with an atomic checkpoint at out_dir/<phase-name> bundling the optimizer
// state, plus an append-only JSON-lines metrics log at
// out_dir/<phase-name>.metrics.jsonl with one {step, phase, loss, lr,
// image_batch} record per iteration. Later phases reload the previous
// checkpoint from disk, inflate temporal blocks on the first video phase,
// and inject temporal resampling where flagged. `resume_from` skips every
// phase up to and including the checkpoint's recorded phase and continues
// with its optimizer state and step counter. Returns the checkpoint
// directories written by this run.
std::vector<std::string> run_progressive(const PhasePlan& plan, const TrainSetup& setup,
                                         const std::vector<data::SyntheticScene>& scenes,
                                         const std::string& out_dir,
                                         const std::string& resume_from = "");

}  // namespace vton::train
