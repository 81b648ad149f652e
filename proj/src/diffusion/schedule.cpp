#include "diffusion/schedule.hpp"

#include <cmath>

#include "core/error.hpp"

namespace vton::diffusion {

namespace {
constexpr double kPi = 3.14159265358979323846;

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw InvalidArgument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

Tensor axpby(double a, const Tensor& x, double b, const Tensor& y) {
    Tensor out(x.shape());
    const double* px = x.data();
    const double* py = y.data();
    double* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = a * px[i] + b * py[i];
    return out;
}
}  // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::Cosine;
    if (s == "linear") return ScheduleKind::Linear;
    throw InvalidArgument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Cosine ? "cosine" : "linear";
}

void DiffusionSchedule::check_t(int64_t t) const {
    if (t < 0 || t >= num_steps)
        throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(num_steps) + ")");
}

DiffusionSchedule make_schedule(int64_t num_steps, ScheduleKind kind) {
    if (num_steps < 2) throw InvalidArgument("num_steps must be >= 2, got " + std::to_string(num_steps));
    DiffusionSchedule s;
    s.num_steps = num_steps;
    s.kind = kind;
    s.alphas.resize(size_t(num_steps));
    s.sigmas.resize(size_t(num_steps));
    if (kind == ScheduleKind::Cosine) {
        const double e = 0.008 * double(num_steps);  // small offset, keeps alpha[last] > 0
        const double norm = std::cos(0.5 * kPi * e / (double(num_steps) + e));
        for (int64_t t = 0; t < num_steps; ++t) {
            double a = std::cos(0.5 * kPi * (double(t) + e) / (double(num_steps) + e)) / norm;
            s.alphas[size_t(t)] = a;
            s.sigmas[size_t(t)] = std::sqrt(std::max(0.0, 1.0 - a * a));
        }
    } else {
        const double a2_hi = 1.0 - 1e-4;
        const double a2_lo = 1e-4;
        for (int64_t t = 0; t < num_steps; ++t) {
            double frac = double(t) / double(num_steps - 1);
            double a2 = a2_hi + (a2_lo - a2_hi) * frac;
            s.alphas[size_t(t)] = std::sqrt(a2);
            s.sigmas[size_t(t)] = std::sqrt(1.0 - a2);
        }
    }
    return s;
}

Tensor add_noise(const Tensor& x0, int64_t t, const Tensor& noise, const DiffusionSchedule& sched) {
    check_same_shape(x0, noise, "add_noise");
    sched.check_t(t);
    return axpby(sched.alpha(t), x0, sched.sigma(t), noise);
}

Tensor v_from(const Tensor& x0, const Tensor& noise, int64_t t, const DiffusionSchedule& sched) {
    check_same_shape(x0, noise, "v_from");
    sched.check_t(t);
    return axpby(sched.alpha(t), noise, -sched.sigma(t), x0);
}

Tensor x0_from_v(const Tensor& z_t, const Tensor& v, int64_t t, const DiffusionSchedule& sched) {
    check_same_shape(z_t, v, "x0_from_v");
    sched.check_t(t);
    return axpby(sched.alpha(t), z_t, -sched.sigma(t), v);
}

Tensor eps_from_v(const Tensor& z_t, const Tensor& v, int64_t t, const DiffusionSchedule& sched) {
    check_same_shape(z_t, v, "eps_from_v");
    sched.check_t(t);
    return axpby(sched.sigma(t), z_t, sched.alpha(t), v);
}

Tensor x0_from_eps(const Tensor& z_t, const Tensor& eps, int64_t t, const DiffusionSchedule& sched) {
    check_same_shape(z_t, eps, "x0_from_eps");
    sched.check_t(t);
    const double a = sched.alpha(t);
    if (a == 0.0) throw NumericError("x0_from_eps: alpha is zero at t=" + std::to_string(t));
    return axpby(1.0 / a, z_t, -sched.sigma(t) / a, eps);
}

Tensor eps_from_x0(const Tensor& z_t, const Tensor& x0, int64_t t, const DiffusionSchedule& sched) {
    check_same_shape(z_t, x0, "eps_from_x0");
    sched.check_t(t);
    const double sg = sched.sigma(t);
    if (sg == 0.0) throw NumericError("eps_from_x0: sigma is zero at t=" + std::to_string(t));
    return axpby(1.0 / sg, z_t, -sched.alpha(t) / sg, x0);
}

}  // namespace vton::diffusion
