#include "train/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "core/version.hpp"
#include "model/checkpoint.hpp"
#include "nn/autodiff.hpp"

namespace vton::train {

namespace fs = std::filesystem;

// ---- learning-rate schedule ----

void OptimizerSpec::validate() const {
    if (kind != "adam") throw InvalidArgument("unsupported optimizer kind '" + kind + "'");
    if (lr_start <= 0.0 || lr_end < 0.0 || lr_end > lr_start)
        throw InvalidArgument("learning rate must satisfy 0 <= lr_end <= lr_start, lr_start > 0");
    if (warmup_steps < 0 || decay_steps < 1)
        throw InvalidArgument("warmup_steps must be >= 0 and decay_steps >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || eps <= 0.0)
        throw InvalidArgument("Adam moments need beta1, beta2 in [0,1) and eps > 0");
}

double lr_at(int64_t step, const OptimizerSpec& spec) {
    if (step < 0) throw InvalidArgument("lr_at: step must be >= 0");
    if (step < spec.warmup_steps)
        return spec.lr_start * double(step) / double(spec.warmup_steps);
    const int64_t u = step - spec.warmup_steps;
    if (u >= spec.decay_steps) return spec.lr_end;
    return spec.lr_start + (spec.lr_end - spec.lr_start) * double(u) / double(spec.decay_steps);
}

// ---- optimizer ----

Adam::Adam(const model::TryOnDenoiser& m, OptimizerSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    rebind(m);
}

void Adam::rebind(const model::TryOnDenoiser& m) {
    params_ = m.params.all();
    std::map<std::string, Slot> kept;
    for (const auto& p : params_) {
        auto it = state_.find(p->name);
        if (it != state_.end() && it->second.m.shape() == p->var->value.shape()) {
            kept[p->name] = std::move(it->second);
        } else {
            Slot s;
            s.m = Tensor::zeros(p->var->value.shape());
            s.v = Tensor::zeros(p->var->value.shape());
            kept[p->name] = std::move(s);
        }
    }
    state_ = std::move(kept);
}

int64_t Adam::step(double lr) {
    int64_t updated = 0;
    for (const auto& p : params_) {
        const Tensor& g = p->var->grad;
        if (g.numel() == 0) continue;  // not part of this batch's graph
        Slot& s = state_.at(p->name);
        ++s.steps;
        ++updated;
        const double bc1 = 1.0 - std::pow(spec_.beta1, double(s.steps));
        const double bc2 = 1.0 - std::pow(spec_.beta2, double(s.steps));
        Tensor& w = p->var->value;
        for (int64_t i = 0; i < w.numel(); ++i) {
            s.m[i] = spec_.beta1 * s.m[i] + (1.0 - spec_.beta1) * g[i];
            s.v[i] = spec_.beta2 * s.v[i] + (1.0 - spec_.beta2) * g[i] * g[i];
            w[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + spec_.eps);
        }
    }
    // Deallocate instead of zeroing so the next step can again tell "zero
    // gradient" apart from "never entered the graph".
    for (const auto& p : params_) p->var->grad = Tensor();
    return updated;
}

void Adam::save(const std::string& dir, int64_t global_step) const {
    int64_t total = 0;
    for (const auto& p : params_) total += p->var->value.numel();
    Tensor m_flat({total}), v_flat({total});
    Tensor steps({int64_t(params_.size())});
    std::vector<std::string> names;
    int64_t off = 0;
    for (size_t k = 0; k < params_.size(); ++k) {
        const auto& p = params_[k];
        const Slot& s = state_.at(p->name);
        std::copy(s.m.vec().begin(), s.m.vec().end(), m_flat.vec().begin() + off);
        std::copy(s.v.vec().begin(), s.v.vec().end(), v_flat.vec().begin() + off);
        off += s.m.numel();
        steps[int64_t(k)] = double(s.steps);
        names.push_back(p->name);
    }
    npy::save(dir + "/opt_m.npy", m_flat);
    npy::save(dir + "/opt_v.npy", v_flat);
    npy::save(dir + "/opt_steps.npy", steps);

    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["kind"] = spec_.kind;
    j["global_step"] = global_step;
    j["param_names"] = names;
    write_json_file(dir + "/opt_meta.json", j);
}

int64_t Adam::load(const std::string& dir) {
    const auto j = read_json_file(dir + "/opt_meta.json");
    check_format_version(j, "optimizer state " + dir);
    try {
        const auto names = j.at("param_names").get<std::vector<std::string>>();
        if (names.size() != params_.size())
            throw IoError("optimizer state " + dir + " holds " + std::to_string(names.size()) +
                          " parameters, model has " + std::to_string(params_.size()));
        for (size_t k = 0; k < names.size(); ++k)
            if (names[k] != params_[k]->name)
                throw IoError("optimizer state " + dir + " parameter '" + names[k] +
                              "' does not match model parameter '" + params_[k]->name + "'");
        const Tensor m_flat = npy::load(dir + "/opt_m.npy");
        const Tensor v_flat = npy::load(dir + "/opt_v.npy");
        const Tensor steps = npy::load(dir + "/opt_steps.npy");
        int64_t total = 0;
        for (const auto& p : params_) total += p->var->value.numel();
        if (m_flat.numel() != total || v_flat.numel() != total ||
            steps.numel() != int64_t(params_.size()))
            throw IoError("optimizer state " + dir + " has the wrong element count");
        int64_t off = 0;
        for (size_t k = 0; k < params_.size(); ++k) {
            Slot& s = state_.at(params_[k]->name);
            std::copy(m_flat.vec().begin() + off, m_flat.vec().begin() + off + s.m.numel(),
                      s.m.vec().begin());
            std::copy(v_flat.vec().begin() + off, v_flat.vec().begin() + off + s.v.numel(),
                      s.v.vec().begin());
            off += s.m.numel();
            s.steps = std::llround(steps[int64_t(k)]);
        }
        return j.at("global_step").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed optimizer state " + dir + ": " + e.what());
    }
}

// ---- batch stream ----

JointStream::JointStream(const std::vector<data::SyntheticScene>* image_scenes,
                         const std::vector<data::SyntheticScene>* video_scenes,
                         int64_t frame_length, int64_t batch_size, double image_fraction,
                         uint64_t seed)
    : image_(image_scenes),
      video_(video_scenes),
      frame_length_(frame_length),
      batch_size_(batch_size),
      image_fraction_(image_fraction),
      rng_(seed) {
    if (!(image_fraction_ >= 0.0 && image_fraction_ <= 1.0))
        throw InvalidArgument("image_fraction must lie in [0,1]");
    if (batch_size_ < 1) throw InvalidArgument("batch_size must be >= 1");
    if (frame_length_ < 1) throw InvalidArgument("frame_length must be >= 1");
    if (image_fraction_ > 0.0 && (image_ == nullptr || image_->empty()))
        throw InvalidArgument("image batches requested but the image dataset is empty");
    if (image_fraction_ < 1.0) {
        if (video_ == nullptr || video_->empty())
            throw InvalidArgument("video batches requested but the video dataset is empty");
        for (size_t i = 0; i < video_->size(); ++i)
            if ((*video_)[i].T >= frame_length_) eligible_.push_back(i);
        if (eligible_.empty())
            throw InvalidArgument("no scene is long enough for clips of " +
                                  std::to_string(frame_length_) + " frames");
    }
}

Batch JointStream::next() {
    Batch b;
    b.image_batch = rng_.bernoulli(image_fraction_);
    std::vector<data::TrainingExample> rows;
    rows.reserve(size_t(batch_size_));
    for (int64_t i = 0; i < batch_size_; ++i) {
        if (b.image_batch) {
            const auto idx = size_t(rng_.uniform_int(0, int64_t(image_->size()) - 1));
            const auto& scene = (*image_)[idx];
            const int64_t t0 = rng_.uniform_int(0, scene.T - 1);
            const int64_t gf = rng_.uniform_int(0, scene.T - 1);
            rows.push_back(data::make_example(scene, t0, 1, scene, gf));
            b.scene_ids.push_back(int64_t(idx));
            b.start_frames.push_back(t0);
        } else {
            const auto idx = eligible_[size_t(rng_.uniform_int(0, int64_t(eligible_.size()) - 1))];
            const auto& scene = (*video_)[idx];
            const int64_t t0 = rng_.uniform_int(0, scene.T - frame_length_);
            const int64_t gf = rng_.uniform_int(0, scene.T - 1);
            rows.push_back(data::make_example(scene, t0, frame_length_, scene, gf));
            b.scene_ids.push_back(int64_t(idx));
            b.start_frames.push_back(t0);
        }
    }
    b.ex = data::stack_examples(rows);
    return b;
}

JointStream make_joint_stream(const std::vector<data::SyntheticScene>* image_scenes,
                              const std::vector<data::SyntheticScene>* video_scenes,
                              int64_t frame_length, int64_t batch_size, double image_fraction,
                              uint64_t seed) {
    return JointStream(image_scenes, video_scenes, frame_length, batch_size, image_fraction, seed);
}

// ---- one step ----

data::TryOnConditioning apply_conditioning_dropout(const data::TryOnConditioning& cond,
                                                   double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("dropout rate must lie in [0,1]");
    data::TryOnConditioning out = cond;
    out.null_agnostic = rng.bernoulli(rate);
    out.null_garment = rng.bernoulli(rate);
    out.null_garment_pose = rng.bernoulli(rate);
    out.null_person_pose = rng.bernoulli(rate);
    return out;
}

namespace {

struct DenoiseProblem {
    Tensor z;
    Tensor target;
    std::vector<int64_t> t;
};

// Per-row uniform timestep, forward-process noising, and the regression
// target in the model's prediction space.
DenoiseProblem make_problem(const Tensor& x0, const diffusion::DiffusionSchedule& sched,
                            model::PredictionTarget target, Rng& rng) {
    DenoiseProblem p;
    const int64_t batch = x0.dim(0);
    const int64_t row = x0.numel() / batch;
    p.z = Tensor(x0.shape());
    p.target = Tensor(x0.shape());
    p.t.reserve(size_t(batch));
    for (int64_t b = 0; b < batch; ++b) p.t.push_back(rng.uniform_int(0, sched.num_steps - 1));
    for (int64_t b = 0; b < batch; ++b) {
        const double a = sched.alpha(p.t[size_t(b)]);
        const double s = sched.sigma(p.t[size_t(b)]);
        for (int64_t i = b * row; i < (b + 1) * row; ++i) {
            const double noise = rng.normal();
            p.z[i] = a * x0[i] + s * noise;
            p.target[i] = target == model::PredictionTarget::Epsilon ? noise
                                                                     : a * noise - s * x0[i];
        }
    }
    return p;
}

}  // namespace

double train_step(const model::TryOnDenoiser& m, Adam& opt, const Batch& batch,
                  const diffusion::DiffusionSchedule& sched, double dropout_rate, double lr,
                  Rng& rng) {
    const auto problem = make_problem(batch.ex.x0, sched, m.config.prediction_target, rng);
    const auto cond = apply_conditioning_dropout(batch.ex.cond, dropout_rate, rng);
    const auto branch = batch.image_batch ? model::Branch::Image : model::Branch::Video;

    const nn::Var out = model::forward(m, nn::constant(problem.z), problem.t, cond, branch);
    const nn::Var loss = nn::mse(out, nn::constant(problem.target));
    const double loss_value = loss->value[0];
    if (!std::isfinite(loss_value))
        throw TrainingDivergence("loss became non-finite on a " +
                                 std::string(batch.image_batch ? "image" : "video") +
                                 " batch (t[0]=" + std::to_string(problem.t[0]) + ")");
    nn::backward(loss);
    opt.step(lr);
    return loss_value;
}

double validation_loss(const model::TryOnDenoiser& m, const data::TrainingExample& ex,
                       const diffusion::DiffusionSchedule& sched, uint64_t seed,
                       model::Branch branch) {
    nn::NoGradGuard no_grad;
    Rng rng(seed);
    const auto problem = make_problem(ex.x0, sched, m.config.prediction_target, rng);
    const nn::Var out = model::forward(m, nn::constant(problem.z), problem.t, ex.cond, branch);
    return nn::mse(out, nn::constant(problem.target))->value[0];
}

// ---- phase plan ----

namespace {

const std::set<int64_t> kAllowedFrameLengths = {1, 8, 16, 32, 64};

}  // namespace

void PhasePlan::validate() const {
    if (phases.empty()) throw InvalidArgument("phase plan is empty");
    std::set<std::string> names;
    int64_t prev_video_t = 0;
    bool saw_video = false;
    for (size_t i = 0; i < phases.size(); ++i) {
        const auto& ph = phases[i];
        if (ph.name.empty()) throw InvalidArgument("phase " + std::to_string(i) + " has no name");
        if (!names.insert(ph.name).second)
            throw InvalidArgument("duplicate phase name '" + ph.name + "'");
        if (!kAllowedFrameLengths.count(ph.frame_length))
            throw InvalidArgument("phase '" + ph.name + "': frame_length " +
                                  std::to_string(ph.frame_length) +
                                  " not in {1, 8, 16, 32, 64}");
        if (ph.iterations < 0 || ph.batch_size < 1)
            throw InvalidArgument("phase '" + ph.name +
                                  "': iterations must be >= 0 and batch_size >= 1");
        if (!(ph.image_fraction >= 0.0 && ph.image_fraction <= 1.0))
            throw InvalidArgument("phase '" + ph.name + "': image_fraction must lie in [0,1]");
        if (i == 0) {
            if (ph.frame_length != 1 || ph.image_fraction != 1.0)
                throw InvalidArgument(
                    "the first phase must be image-only: frame_length 1, image_fraction 1");
            if (ph.inflate_temporal || ph.inject_resampling)
                throw InvalidArgument("the first phase cannot change the architecture");
            continue;
        }
        if (ph.frame_length == 1)
            throw InvalidArgument("phase '" + ph.name +
                                  "': only the first phase may use frame_length 1");
        if (saw_video && ph.frame_length != 2 * prev_video_t)
            throw InvalidArgument("phase '" + ph.name + "': frame length must double, expected " +
                                  std::to_string(2 * prev_video_t));
        if (ph.inflate_temporal != !saw_video)
            throw InvalidArgument("phase '" + ph.name +
                                  "': inflate_temporal belongs to exactly the first video phase");
        if (ph.inject_resampling && ph.frame_length != 64)
            throw InvalidArgument("phase '" + ph.name +
                                  "': resampling is injected only at 64 frames");
        prev_video_t = ph.frame_length;
        saw_video = true;
    }
}

PhasePlan desk_default_plan() {
    PhasePlan plan;
    plan.phases = {
        {"image", 1, 5000, 8, 1.0, false, false},
        {"temporal_8", 8, 1000, 1, 0.5, true, false},
        {"temporal_16", 16, 1000, 1, 0.5, false, false},
        {"temporal_32", 32, 1000, 1, 0.5, false, false},
        {"temporal_64", 64, 1000, 1, 0.5, false, true},
    };
    return plan;
}

// ---- progressive runner ----

namespace {

void check_same_architecture(const model::TryOnDenoiser& loaded, const TrainSetup& setup) {
    const model::ModelConfig& a = loaded.config;
    const model::ModelConfig& b = setup.model;
    const model::ConditioningSpec& c = loaded.cond_spec;
    const model::ConditioningSpec& d = setup.cond;
    const bool same = a.base_channels == b.base_channels &&
                      a.channel_multipliers == b.channel_multipliers &&
                      a.num_dit_blocks == b.num_dit_blocks &&
                      a.attention_heads == b.attention_heads &&
                      a.pose_channels == b.pose_channels &&
                      a.prediction_target == b.prediction_target &&
                      c.image_channels == d.image_channels &&
                      c.agnostic_channels == d.agnostic_channels &&
                      c.garment_channels == d.garment_channels &&
                      c.pose_channels == d.pose_channels;
    if (!same)
        throw InvalidState("checkpoint architecture does not match the configured model");
}

void append_metric(std::ofstream& log, int64_t step, const std::string& phase, double loss,
                   double lr, bool image_batch) {
    nlohmann::json j;
    j["step"] = step;
    j["phase"] = phase;
    j["loss"] = loss;
    j["lr"] = lr;
    j["image_batch"] = image_batch;
    log << j.dump() << "\n";
    log.flush();
}

}  // namespace

std::vector<std::string> run_progressive(const PhasePlan& plan, const TrainSetup& setup,
                                         const std::vector<data::SyntheticScene>& scenes,
                                         const std::string& out_dir,
                                         const std::string& resume_from) {
    plan.validate();
    setup.opt.validate();
    if (setup.model.temporal_enabled || setup.model.temporal_resampling_enabled)
        throw InvalidArgument(
            "TrainSetup.model must describe the spatial architecture only; the plan controls "
            "temporal capability");
    {
        auto probe = setup.model;
        probe.validate();
        // The eventual video phases must also be buildable.
        probe.temporal_enabled = true;
        probe.frame_length = 8;
        probe.validate();
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

    const auto sched = diffusion::make_schedule(setup.schedule_steps, setup.schedule_kind);
    const Rng base(setup.seed);

    model::TryOnDenoiser m;
    Adam opt;
    int64_t global_step = 0;
    size_t first_phase = 0;
    std::string prev_ckpt = resume_from;

    if (resume_from.empty()) {
        auto cfg = setup.model;
        cfg.temporal_enabled = false;
        cfg.temporal_resampling_enabled = false;
        cfg.frame_length = 1;
        m = model::build_model(cfg, setup.cond, setup.seed);
        opt = Adam(m, setup.opt);
    } else {
        auto loaded = model::load_checkpoint(resume_from);
        size_t idx = plan.phases.size();
        for (size_t i = 0; i < plan.phases.size(); ++i)
            if (plan.phases[i].name == loaded.phase) idx = i;
        if (idx == plan.phases.size())
            throw InvalidState("cannot resume: checkpoint phase '" + loaded.phase +
                               "' is not part of the plan");
        check_same_architecture(loaded.model, setup);
        m = std::move(loaded.model);
        opt = Adam(m, setup.opt);
        global_step = opt.load(resume_from);
        first_phase = idx + 1;
    }

    std::vector<std::string> checkpoints;
    for (size_t i = first_phase; i < plan.phases.size(); ++i) {
        const auto& ph = plan.phases[i];
        if (i > first_phase) {
            // Phase transitions go through the filesystem on purpose: every
            // phase starts from the previous phase's persisted checkpoint.
            auto loaded = model::load_checkpoint(prev_ckpt);
            m = std::move(loaded.model);
            opt = Adam(m, setup.opt);
            global_step = opt.load(prev_ckpt);
        }
        m.config.frame_length = ph.frame_length;
        if (ph.inflate_temporal) m = model::inflate_temporal(m, model::InflateInit::Identity);
        if (ph.inject_resampling) m = model::inject_temporal_resampling(m);
        m.config.validate();
        opt.rebind(m);

        JointStream stream(&scenes, &scenes, ph.frame_length, ph.batch_size, ph.image_fraction,
                           base.split(ph.name + "/stream").next_u64());
        Rng step_rng = base.split(ph.name + "/step");

        const std::string log_path = out_dir + "/" + ph.name + ".metrics.jsonl";
        std::ofstream log(log_path, std::ios::app);
        if (!log) throw IoError("cannot open metrics log " + log_path);

        for (int64_t it = 0; it < ph.iterations; ++it) {
            const Batch batch = stream.next();
            const double lr = lr_at(global_step, setup.opt);
            const double loss =
                train_step(m, opt, batch, sched, setup.dropout_rate, lr, step_rng);
            append_metric(log, global_step, ph.name, loss, lr, batch.image_batch);
            ++global_step;
        }

        const std::string ckpt_dir = out_dir + "/" + ph.name;
        model::save_checkpoint(m, ckpt_dir, ph.name, [&](const std::string& tmp_dir) {
            opt.save(tmp_dir, global_step);
        });
        checkpoints.push_back(ckpt_dir);
        prev_ckpt = ckpt_dir;
    }
    return checkpoints;
}

}  // namespace vton::train
