#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace vton::data {

// Pixel region labels of the rendered figure. Person mask = any non-background
// label; garment segmentation = the Garment label (the worn top).
enum class Region : int {
    Background = 0,
    Head = 1,
    Arms = 2,
    Hands = 3,
    Garment = 4,
    Bottoms = 5,
    Legs = 6,
    Shoes = 7,
};
inline constexpr int kNumRegions = 8;
const char* region_name(Region r);

// Joint order is fixed; pose maps carry one channel per joint.
inline constexpr int kNumJoints = 13;
extern const std::array<const char*, kNumJoints> kJointNames;

using Joint = std::array<double, 2>;  // (y, x) in pixels
using Pose = std::array<Joint, kNumJoints>;

// Motion law of the articulated figure. Every animated quantity is a single
// sinusoid q(t) = base + amp * sin(2*pi*freq*t/cycle_frames + phase), so the
// trajectory can be replayed exactly and per-frame displacement admits the
// closed Lipschitz bound in motion_step_bound().
struct MotionParams {
    double cycle_frames = 24.0;
    double base_y = 0.0, base_x = 0.0;  // figure center (pixels)
    double amp_y = 0.0, amp_x = 0.0;
    double freq_y = 1.0, freq_x = 1.0;
    double phase_y = 0.0, phase_x = 0.0;
    double arm_amp = 0.0, arm_freq = 1.0, arm_phase = 0.0;  // radians
    double leg_amp = 0.0, leg_freq = 1.0, leg_phase = 0.0;
    double fig_h = 0.0;  // figure height (pixels)
};

MotionParams make_motion_params(uint64_t seed, int64_t H, int64_t W);
Pose joints_at(const MotionParams& mp, int64_t t);
// Upper bound on the displacement of any joint between consecutive frames.
double motion_step_bound(const MotionParams& mp);

struct SyntheticScene {
    Tensor frames;        // [T,H,W,3], values in [-1,1]
    Tensor person_masks;  // [T,H,W,1], 0/1
    Tensor labels;        // [T,H,W,1], Region ids
    std::vector<Pose> poses;
    int garment_color_id = 0;
    uint64_t seed = 0;
    int64_t T = 0, H = 0, W = 0;

    Tensor garment_segmentation() const;  // [T,H,W,1], 0/1
};

// Deterministic in (seed, T, H, W). H, W >= 16, T >= 1.
SyntheticScene generate_scene(uint64_t seed, int64_t T, int64_t H, int64_t W);

// Clothing-agnostic frames: inside the per-frame person bounding box, every
// pixel is blanked to 0 except the visible regions {head, hands, legs, shoes}
// (plus bottoms when keep_bottoms, the top-try-on-only mode). The person mask
// is appended as a 4th channel. Output [T,H,W,4].
Tensor make_agnostic(const SyntheticScene& scene, bool keep_bottoms = false);

struct GarmentInputs {
    Tensor garment;  // [H,W,4]: garment-only pixels + garment mask channel
    Pose pose;       // wearer's pose at the source frame
};
GarmentInputs make_garment_inputs(const SyntheticScene& scene, int64_t frame_index);

// K-channel map of Gaussian splats, one channel per joint, [H,W,K].
Tensor render_pose_map(const std::vector<Joint>& joints, int64_t H, int64_t W,
                       double sigma = 1.5);
Tensor render_pose_map(const Pose& joints, int64_t H, int64_t W, double sigma = 1.5);

// The conditioning bundle consumed by the denoiser. Null flags substitute the
// model's learned null embedding for the corresponding input (conditioning
// dropout at train time, guidance-group selection at sampling time).
struct TryOnConditioning {
    Tensor agnostic;      // [B,T,H,W,4]
    Tensor garment;       // [B,H,W,4]
    Tensor person_pose;   // [B,T,H,W,K]
    Tensor garment_pose;  // [B,H,W,K]
    bool null_agnostic = false;
    bool null_garment = false;
    bool null_garment_pose = false;
    bool null_person_pose = false;
};

// One training sample: target clip + its conditioning (batch axis of 1).
struct TrainingExample {
    Tensor x0;  // [1,T,H,W,3]
    TryOnConditioning cond;
};
// Person clip = frames [t0, t0+T) of `person`; garment inputs taken from
// `garment_src` at `garment_frame`.
TrainingExample make_example(const SyntheticScene& person, int64_t t0, int64_t T,
                             const SyntheticScene& garment_src, int64_t garment_frame,
                             bool keep_bottoms = false);
// Stacks single-sample examples along the batch axis (shapes must agree).
TrainingExample stack_examples(const std::vector<TrainingExample>& examples);

struct EvalPair {
    int64_t person_scene = 0;
    int64_t garment_scene = 0;
    int64_t garment_frame = 0;
};
// Pairs every scene with `pairs_per_scene` garment frames drawn from distinct
// other scenes. Deterministic in seed.
std::vector<EvalPair> pair_for_eval(const std::vector<SyntheticScene>& scenes, uint64_t seed,
                                    int64_t pairs_per_scene = 3);

}  // namespace vton::data
