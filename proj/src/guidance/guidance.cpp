#include "guidance/guidance.hpp"

#include <cmath>

#include "core/error.hpp"

namespace vton::guidance {

void GuidanceSchedule::validate() const {
    if (weights.size() != groups.size() + 1)
        throw InvalidArgument("guidance needs one weight per group plus the unconditional term: " +
                              std::to_string(weights.size()) + " weights for " +
                              std::to_string(groups.size()) + " groups");
    for (double w : weights)
        if (!std::isfinite(w)) throw InvalidArgument("guidance weights must be finite");
}

namespace {

data::TryOnConditioning with_activation(const data::TryOnConditioning& cond, bool agnostic,
                                        bool garment, bool person_pose) {
    data::TryOnConditioning c = cond;
    c.null_agnostic = !agnostic;
    c.null_garment = !garment;
    c.null_garment_pose = !garment;  // garment pose travels with the garment inputs
    c.null_person_pose = !person_pose;
    return c;
}

}  // namespace

Tensor split_cfg(const DenoiserFn& denoiser, const Tensor& z_t, const std::vector<int64_t>& t,
                 const data::TryOnConditioning& cond, const GuidanceSchedule& sched) {
    sched.validate();
    if (!denoiser) throw InvalidArgument("split_cfg requires a denoiser");

    Tensor eps0 = denoiser(z_t, t, with_activation(cond, false, false, false));
    Tensor out = eps0;
    const double w0 = sched.weights[0];
    for (int64_t j = 0; j < out.numel(); ++j) out[j] *= w0;
    Tensor prev = sched.history == HistoryMode::Literal ? out : eps0;

    bool agnostic = false, garment = false, person_pose = false;
    for (size_t i = 0; i < sched.groups.size(); ++i) {
        agnostic |= sched.groups[i].agnostic;
        garment |= sched.groups[i].garment;
        person_pose |= sched.groups[i].person_pose;
        Tensor ei = denoiser(z_t, t, with_activation(cond, agnostic, garment, person_pose));
        if (!ei.same_shape(eps0))
            throw InvalidArgument("denoiser returned mismatched shapes across guidance terms");
        const double w = sched.weights[i + 1];
        for (int64_t j = 0; j < out.numel(); ++j) out[j] += w * (ei[j] - prev[j]);
        prev = std::move(ei);
    }
    return out;
}

GuidanceSchedule make_tryon_schedule(double w_null, double w_p, double w_g, double w_full) {
    GuidanceSchedule s;
    s.groups.push_back({"agnostic", true, false, false});
    s.groups.push_back({"garment", false, true, false});
    s.groups.push_back({"person_pose", false, false, true});
    s.weights = {w_null, w_p, w_g, w_full};
    s.validate();
    return s;
}

}  // namespace vton::guidance
