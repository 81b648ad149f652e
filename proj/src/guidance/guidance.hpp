#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "data/synthetic.hpp"

namespace vton::guidance {

// Conditioning inputs newly activated by one guidance group. `garment`
// covers the garment appearance, its mask channel, and the garment pose
// together. Groups accumulate: group i's active set is the union of groups
// 1..i.
struct CondGroup {
    std::string name;
    bool agnostic = false;
    bool garment = false;
    bool person_pose = false;
};

// How the running "previous prediction" is seeded before the first group.
// Literal follows the published pseudocode (prev = w0 * eps(null)); Intuitive
// uses the unscaled unconditional prediction. The two coincide whenever
// w0 == 1, which covers every published weight set.
enum class HistoryMode { Literal, Intuitive };

struct GuidanceSchedule {
    std::vector<CondGroup> groups;
    std::vector<double> weights;  // groups.size()+1 entries, unconditional first
    HistoryMode history = HistoryMode::Literal;

    void validate() const;  // throws InvalidArgument
};

// Denoiser abstraction for guidance: any callable producing a prediction for
// (z_t, t, conditioning). split_cfg only manipulates the null flags of the
// conditioning it passes in; z_t and t are forwarded untouched.
using DenoiserFn = std::function<Tensor(const Tensor& z_t, const std::vector<int64_t>& t,
                                        const data::TryOnConditioning& cond)>;

// Split classifier-free guidance. Runs the denoiser once per term (an
// unconditional call plus one per group, exactly groups.size()+1 calls),
// combining them as
//   out = w0*eps(null); prev = out (Literal) or eps(null) (Intuitive)
//   for each group i: out += w_i * (eps_i - prev); prev = eps_i
// Any null flags already set on `cond` are overridden by each term's own
// activation pattern.
Tensor split_cfg(const DenoiserFn& denoiser, const Tensor& z_t, const std::vector<int64_t>& t,
                 const data::TryOnConditioning& cond, const GuidanceSchedule& sched);

// The fixed try-on schedule: unconditional, then clothing-agnostic inputs,
// then garment inputs, then person poses, with weights (w_null, w_p, w_g,
// w_full) in that order.
GuidanceSchedule make_tryon_schedule(double w_null, double w_p, double w_g, double w_full);

}  // namespace vton::guidance
