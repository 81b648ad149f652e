#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace vton::diffusion {

enum class ScheduleKind { Cosine, Linear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Per-timestep signal/noise coefficients of a variance-preserving forward
// process: z_t = alpha[t] * x0 + sigma[t] * noise, with alpha^2 + sigma^2 = 1.
// Timesteps run 0..num_steps-1 with t = 0 the least noisy.
struct DiffusionSchedule {
    int64_t num_steps = 0;
    std::vector<double> alphas;
    std::vector<double> sigmas;
    ScheduleKind kind = ScheduleKind::Cosine;

    double alpha(int64_t t) const { return alphas[size_t(t)]; }
    double sigma(int64_t t) const { return sigmas[size_t(t)]; }
    void check_t(int64_t t) const;
};

// Cosine kind uses the squared-cosine signal curve with a small offset:
//   alpha[t] = cos(pi/2 * (t + e) / (num_steps + e)) / cos(pi/2 * e / (num_steps + e))
// with e = 0.008 * num_steps, so alpha[0] is exactly 1. Linear kind
// interpolates alpha^2 linearly from 1 - 1e-4 down to 1e-4.
DiffusionSchedule make_schedule(int64_t num_steps, ScheduleKind kind);

// Forward process: z_t = alpha[t] * x0 + sigma[t] * noise.
Tensor add_noise(const Tensor& x0, int64_t t, const Tensor& noise, const DiffusionSchedule& sched);

// v-parameterization and its inverses:
//   v = alpha * noise - sigma * x0
//   x0 = alpha * z_t - sigma * v
//   eps = sigma * z_t + alpha * v
Tensor v_from(const Tensor& x0, const Tensor& noise, int64_t t, const DiffusionSchedule& sched);
Tensor x0_from_v(const Tensor& z_t, const Tensor& v, int64_t t, const DiffusionSchedule& sched);
Tensor eps_from_v(const Tensor& z_t, const Tensor& v, int64_t t, const DiffusionSchedule& sched);

// Conversions between prediction spaces given z_t, used by the sampler.
Tensor x0_from_eps(const Tensor& z_t, const Tensor& eps, int64_t t, const DiffusionSchedule& sched);
Tensor eps_from_x0(const Tensor& z_t, const Tensor& x0, int64_t t, const DiffusionSchedule& sched);

}  // namespace vton::diffusion
