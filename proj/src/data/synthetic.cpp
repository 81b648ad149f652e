#include "data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace vton::data {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Limb lengths and shape radii as fractions of figure height.
constexpr double kHeadOff = 0.32, kHeadR = 0.07;
constexpr double kNeckOff = 0.24;
constexpr double kShoulderOff = 0.22, kShoulderDx = 0.10;
constexpr double kUpperArm = 0.12, kForeArm = 0.10;
constexpr double kHipOff = 0.02, kHipDx = 0.06;
constexpr double kThigh = 0.16, kShin = 0.14;
constexpr double kTorsoR = 0.11, kBottomsR = 0.10, kThighR = 0.05;
constexpr double kArmR = 0.035, kHandR = 0.035, kShinR = 0.03, kShoeR = 0.045;
// Forearm and shin angles scale the parent angle by these factors.
constexpr double kForeArmGain = 1.3, kShinGain = 0.7;
constexpr double kArmRest = 0.2;  // resting arm angle from straight down

struct Rgb {
    double r, g, b;
};

constexpr Rgb kGarmentPalette[8] = {
    {0.9, -0.8, -0.8},  // red
    {0.9, 0.1, -0.8},   // orange
    {0.9, 0.9, -0.8},   // yellow
    {-0.7, 0.8, -0.7},  // green
    {-0.7, 0.8, 0.8},   // cyan
    {-0.7, -0.6, 0.9},  // blue
    {0.3, -0.7, 0.9},   // purple
    {0.9, -0.7, 0.8},   // magenta
};
constexpr Rgb kSkin{0.85, 0.45, 0.05};
constexpr Rgb kBottomsColor{-0.45, -0.45, -0.4};
constexpr Rgb kShoeColor{-0.85, -0.8, -0.75};

double seg_dist(double py, double px, const Joint& a, const Joint& b) {
    const double dy = b[0] - a[0], dx = b[1] - a[1];
    const double len2 = dy * dy + dx * dx;
    double u = 0.0;
    if (len2 > 1e-12) u = std::clamp(((py - a[0]) * dy + (px - a[1]) * dx) / len2, 0.0, 1.0);
    const double cy = a[0] + u * dy, cx = a[1] + u * dx;
    return std::hypot(py - cy, px - cx);
}

void paint_capsule(std::vector<int>& lab, int64_t H, int64_t W, const Joint& a, const Joint& b,
                   double radius, Region region) {
    const int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(std::min(a[0], b[0]) - radius)));
    const int64_t y1 = std::min<int64_t>(H - 1, int64_t(std::ceil(std::max(a[0], b[0]) + radius)));
    const int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(std::min(a[1], b[1]) - radius)));
    const int64_t x1 = std::min<int64_t>(W - 1, int64_t(std::ceil(std::max(a[1], b[1]) + radius)));
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x)
            if (seg_dist(double(y), double(x), a, b) <= radius)
                lab[size_t(y * W + x)] = int(region);
}

void paint_disc(std::vector<int>& lab, int64_t H, int64_t W, const Joint& c, double radius,
                Region region) {
    paint_capsule(lab, H, W, c, c, radius, region);
}

}  // namespace

const char* region_name(Region r) {
    switch (r) {
        case Region::Background: return "background";
        case Region::Head: return "head";
        case Region::Arms: return "arms";
        case Region::Hands: return "hands";
        case Region::Garment: return "garment";
        case Region::Bottoms: return "bottoms";
        case Region::Legs: return "legs";
        case Region::Shoes: return "shoes";
    }
    return "unknown";
}

const std::array<const char*, kNumJoints> kJointNames = {
    "head",   "neck",   "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_hand",
    "r_hand", "hip",    "l_knee",     "r_knee",     "l_foot",  "r_foot",
};

MotionParams make_motion_params(uint64_t seed, int64_t H, int64_t W) {
    Rng rng(Rng::hash_combine(seed, 0x6d6f74696f6eULL));  // "motion" stream
    MotionParams mp;
    mp.cycle_frames = 24.0;
    const double h = double(H), w = double(W);
    mp.fig_h = 0.8 * h * (0.97 + 0.06 * rng.uniform());
    mp.base_y = 0.5 * h + (rng.uniform() - 0.5) * 0.04 * h;
    mp.base_x = 0.5 * w + (rng.uniform() - 0.5) * 0.04 * w;
    mp.amp_y = (0.01 + 0.01 * rng.uniform()) * h;
    mp.amp_x = (0.02 + 0.03 * rng.uniform()) * w;
    mp.freq_y = double(rng.uniform_int(1, 2));
    mp.freq_x = double(rng.uniform_int(1, 2));
    mp.phase_y = rng.uniform() * kTau;
    mp.phase_x = rng.uniform() * kTau;
    mp.arm_amp = 0.15 + 0.25 * rng.uniform();
    mp.arm_freq = double(rng.uniform_int(1, 2));
    mp.arm_phase = rng.uniform() * kTau;
    mp.leg_amp = 0.10 + 0.15 * rng.uniform();
    mp.leg_freq = double(rng.uniform_int(1, 2));
    mp.leg_phase = rng.uniform() * kTau;
    return mp;
}

Pose joints_at(const MotionParams& mp, int64_t t) {
    const double phase = kTau * double(t) / mp.cycle_frames;
    const double cy = mp.base_y + mp.amp_y * std::sin(mp.freq_y * phase + mp.phase_y);
    const double cx = mp.base_x + mp.amp_x * std::sin(mp.freq_x * phase + mp.phase_x);
    const double swing = mp.arm_amp * std::sin(mp.arm_freq * phase + mp.arm_phase);
    const double kick = mp.leg_amp * std::sin(mp.leg_freq * phase + mp.leg_phase);
    const double f = mp.fig_h;

    // Arm angles measured from straight down, positive outward.
    const double dl = kArmRest + swing, dr = kArmRest - swing;
    const double ll = kick, lr = -kick;

    Pose p;
    p[0] = {cy - kHeadOff * f, cx};                            // head
    p[1] = {cy - kNeckOff * f, cx};                            // neck
    p[2] = {cy - kShoulderOff * f, cx - kShoulderDx * f};      // l_shoulder
    p[3] = {cy - kShoulderOff * f, cx + kShoulderDx * f};      // r_shoulder
    p[4] = {p[2][0] + kUpperArm * f * std::cos(dl),            // l_elbow
            p[2][1] - kUpperArm * f * std::sin(dl)};
    p[5] = {p[3][0] + kUpperArm * f * std::cos(dr),            // r_elbow
            p[3][1] + kUpperArm * f * std::sin(dr)};
    p[6] = {p[4][0] + kForeArm * f * std::cos(kForeArmGain * dl),  // l_hand
            p[4][1] - kForeArm * f * std::sin(kForeArmGain * dl)};
    p[7] = {p[5][0] + kForeArm * f * std::cos(kForeArmGain * dr),  // r_hand
            p[5][1] + kForeArm * f * std::sin(kForeArmGain * dr)};
    p[8] = {cy + kHipOff * f, cx};                             // hip
    p[9] = {p[8][0] + kThigh * f * std::cos(ll),               // l_knee
            cx - kHipDx * f - kThigh * f * std::sin(ll)};
    p[10] = {p[8][0] + kThigh * f * std::cos(lr),              // r_knee
             cx + kHipDx * f + kThigh * f * std::sin(lr)};
    p[11] = {p[9][0] + kShin * f * std::cos(kShinGain * ll),   // l_foot
             p[9][1] - kShin * f * std::sin(kShinGain * ll)};
    p[12] = {p[10][0] + kShin * f * std::cos(kShinGain * lr),  // r_foot
             p[10][1] + kShin * f * std::sin(kShinGain * lr)};
    return p;
}

double motion_step_bound(const MotionParams& mp) {
    // |sin a - sin b| <= |a - b| and arc length <= radius * angle step, so the
    // per-frame step of any joint is bounded by the center step plus the
    // largest limb arc.
    const double dphase = kTau / mp.cycle_frames;
    const double center = mp.amp_y * mp.freq_y * dphase + mp.amp_x * mp.freq_x * dphase;
    const double arm_arc = (kUpperArm + kForeArm * kForeArmGain) * mp.fig_h * mp.arm_amp *
                           mp.arm_freq * dphase;
    const double leg_arc =
        (kThigh + kShin * kShinGain) * mp.fig_h * mp.leg_amp * mp.leg_freq * dphase;
    return center + std::max(arm_arc, leg_arc);
}

Tensor SyntheticScene::garment_segmentation() const {
    Tensor seg(labels.shape());
    for (int64_t i = 0; i < labels.numel(); ++i)
        seg[i] = labels[i] == double(int(Region::Garment)) ? 1.0 : 0.0;
    return seg;
}

SyntheticScene generate_scene(uint64_t seed, int64_t T, int64_t H, int64_t W) {
    if (T < 1) throw InvalidArgument("generate_scene: T must be >= 1");
    if (H < 16 || W < 16) throw InvalidArgument("generate_scene: H and W must be >= 16");

    SyntheticScene scene;
    scene.seed = seed;
    scene.T = T;
    scene.H = H;
    scene.W = W;
    scene.frames = Tensor({T, H, W, 3});
    scene.person_masks = Tensor({T, H, W, 1});
    scene.labels = Tensor({T, H, W, 1});
    scene.poses.resize(size_t(T));

    Rng rng(Rng::hash_combine(seed, 0x7363656e65ULL));  // "scene" stream
    scene.garment_color_id = int(rng.uniform_int(0, 7));
    const MotionParams mp = make_motion_params(seed, H, W);
    const Rgb garment = kGarmentPalette[scene.garment_color_id];

    std::vector<int> lab(size_t(H * W));
    for (int64_t t = 0; t < T; ++t) {
        const Pose p = joints_at(mp, t);
        scene.poses[size_t(t)] = p;
        std::fill(lab.begin(), lab.end(), int(Region::Background));
        const double f = mp.fig_h;

        // painter's order: torso garment, bottoms+thighs, shins, shoes, head,
        // arms, hands — later paints win
        paint_capsule(lab, H, W, p[1], p[8], kTorsoR * f, Region::Garment);
        paint_capsule(lab, H, W, p[8], {0.5 * (p[9][0] + p[10][0]), 0.5 * (p[9][1] + p[10][1])},
                      kBottomsR * f, Region::Bottoms);
        paint_capsule(lab, H, W, p[8], p[9], kThighR * f, Region::Bottoms);
        paint_capsule(lab, H, W, p[8], p[10], kThighR * f, Region::Bottoms);
        paint_capsule(lab, H, W, p[9], p[11], kShinR * f, Region::Legs);
        paint_capsule(lab, H, W, p[10], p[12], kShinR * f, Region::Legs);
        paint_disc(lab, H, W, p[11], kShoeR * f, Region::Shoes);
        paint_disc(lab, H, W, p[12], kShoeR * f, Region::Shoes);
        paint_disc(lab, H, W, p[0], kHeadR * f, Region::Head);
        paint_capsule(lab, H, W, p[2], p[4], kArmR * f, Region::Arms);
        paint_capsule(lab, H, W, p[3], p[5], kArmR * f, Region::Arms);
        paint_capsule(lab, H, W, p[4], p[6], kArmR * f, Region::Arms);
        paint_capsule(lab, H, W, p[5], p[7], kArmR * f, Region::Arms);
        paint_disc(lab, H, W, p[6], kHandR * f, Region::Hands);
        paint_disc(lab, H, W, p[7], kHandR * f, Region::Hands);

        const double torso_top = p[1][0] - kTorsoR * f, torso_bot = p[8][0] + kTorsoR * f;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const Region r = Region(lab[size_t(y * W + x)]);
                Rgb c{0.0, 0.0, 0.0};
                switch (r) {
                    case Region::Background: {
                        const double g = -0.95 + 0.2 * double(y) / double(H - 1);
                        c = {g, g + 0.05 * double(x) / double(W - 1), g};
                        break;
                    }
                    case Region::Head:
                    case Region::Hands:
                    case Region::Arms:
                    case Region::Legs:
                        c = kSkin;
                        break;
                    case Region::Garment: {
                        // vertical shading, hue-preserving
                        const double u =
                            std::clamp((double(y) - torso_top) / std::max(1.0, torso_bot - torso_top),
                                       0.0, 1.0);
                        const double s = 1.0 - 0.15 * u;
                        c = {garment.r * s, garment.g * s, garment.b * s};
                        break;
                    }
                    case Region::Bottoms:
                        c = kBottomsColor;
                        break;
                    case Region::Shoes:
                        c = kShoeColor;
                        break;
                }
                const int64_t px = ((t * H + y) * W + x);
                scene.frames[px * 3 + 0] = std::clamp(c.r, -1.0, 1.0);
                scene.frames[px * 3 + 1] = std::clamp(c.g, -1.0, 1.0);
                scene.frames[px * 3 + 2] = std::clamp(c.b, -1.0, 1.0);
                scene.labels[px] = double(int(r));
                scene.person_masks[px] = r == Region::Background ? 0.0 : 1.0;
            }
        }
    }
    return scene;
}

Tensor make_agnostic(const SyntheticScene& scene, bool keep_bottoms) {
    const int64_t T = scene.T, H = scene.H, W = scene.W;
    Tensor out({T, H, W, 4});
    for (int64_t t = 0; t < T; ++t) {
        // person bounding box for this frame
        int64_t y0 = H, y1 = -1, x0 = W, x1 = -1;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (scene.person_masks[(t * H + y) * W + x] > 0.5) {
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const int64_t px = (t * H + y) * W + x;
                const Region r = Region(int(scene.labels[px]));
                const bool in_bbox = y >= y0 && y <= y1 && x >= x0 && x <= x1;
                bool visible = r == Region::Head || r == Region::Hands || r == Region::Legs ||
                               r == Region::Shoes;
                if (keep_bottoms && r == Region::Bottoms) visible = true;
                const bool blank = in_bbox && !visible;
                for (int64_t c = 0; c < 3; ++c)
                    out[px * 4 + c] = blank ? 0.0 : scene.frames[px * 3 + c];
                out[px * 4 + 3] = scene.person_masks[px];
            }
        }
    }
    return out;
}

GarmentInputs make_garment_inputs(const SyntheticScene& scene, int64_t frame_index) {
    if (frame_index < 0 || frame_index >= scene.T)
        throw InvalidArgument("make_garment_inputs: frame index " + std::to_string(frame_index) +
                              " out of range [0," + std::to_string(scene.T) + ")");
    const int64_t H = scene.H, W = scene.W;
    GarmentInputs gi;
    gi.garment = Tensor({H, W, 4});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const int64_t px = (frame_index * H + y) * W + x;
            const bool on = int(scene.labels[px]) == int(Region::Garment);
            for (int64_t c = 0; c < 3; ++c)
                gi.garment[(y * W + x) * 4 + c] = on ? scene.frames[px * 3 + c] : 0.0;
            gi.garment[(y * W + x) * 4 + 3] = on ? 1.0 : 0.0;
        }
    gi.pose = scene.poses[size_t(frame_index)];
    return gi;
}

Tensor render_pose_map(const std::vector<Joint>& joints, int64_t H, int64_t W, double sigma) {
    const int64_t K = int64_t(joints.size());
    for (const auto& j : joints)
        if (j[0] < 0 || j[0] > double(H - 1) || j[1] < 0 || j[1] > double(W - 1))
            throw InvalidArgument("render_pose_map: joint out of bounds");
    Tensor map = Tensor::zeros({H, W, K});
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int64_t k = 0; k < K; ++k) {
        const double jy = joints[size_t(k)][0], jx = joints[size_t(k)][1];
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const double d2 = (double(y) - jy) * (double(y) - jy) +
                                  (double(x) - jx) * (double(x) - jx);
                map[(y * W + x) * K + k] = std::exp(-d2 * inv);
            }
    }
    return map;
}

Tensor render_pose_map(const Pose& joints, int64_t H, int64_t W, double sigma) {
    return render_pose_map(std::vector<Joint>(joints.begin(), joints.end()), H, W, sigma);
}

TrainingExample make_example(const SyntheticScene& person, int64_t t0, int64_t T,
                             const SyntheticScene& garment_src, int64_t garment_frame,
                             bool keep_bottoms) {
    if (t0 < 0 || T < 1 || t0 + T > person.T)
        throw InvalidArgument("make_example: frame window out of range");
    if (person.H != garment_src.H || person.W != garment_src.W)
        throw InvalidArgument("make_example: scene dims differ");
    const int64_t H = person.H, W = person.W;

    TrainingExample ex;
    ex.x0 = Tensor({1, T, H, W, 3});
    std::copy_n(person.frames.data() + t0 * H * W * 3, T * H * W * 3, ex.x0.data());

    Tensor agnostic_all = make_agnostic(person, keep_bottoms);
    ex.cond.agnostic = Tensor({1, T, H, W, 4});
    std::copy_n(agnostic_all.data() + t0 * H * W * 4, T * H * W * 4, ex.cond.agnostic.data());

    GarmentInputs gi = make_garment_inputs(garment_src, garment_frame);
    ex.cond.garment = gi.garment.reshaped({1, H, W, 4});
    ex.cond.garment_pose = render_pose_map(gi.pose, H, W).reshaped({1, H, W, kNumJoints});

    ex.cond.person_pose = Tensor({1, T, H, W, kNumJoints});
    for (int64_t t = 0; t < T; ++t) {
        Tensor pm = render_pose_map(person.poses[size_t(t0 + t)], H, W);
        std::copy_n(pm.data(), H * W * kNumJoints,
                    ex.cond.person_pose.data() + t * H * W * kNumJoints);
    }
    return ex;
}

TrainingExample stack_examples(const std::vector<TrainingExample>& examples) {
    if (examples.empty()) throw InvalidArgument("stack_examples: empty batch");
    const auto& first = examples.front();
    auto stack = [&](auto accessor) {
        const Tensor& proto = accessor(first);
        Shape s = proto.shape();
        const int64_t per = proto.numel();
        s[0] = int64_t(examples.size());
        Tensor out(s);
        for (size_t i = 0; i < examples.size(); ++i) {
            const Tensor& t = accessor(examples[i]);
            if (!t.same_shape(proto)) throw InvalidArgument("stack_examples: shape mismatch");
            std::copy_n(t.data(), per, out.data() + int64_t(i) * per);
        }
        return out;
    };
    TrainingExample out;
    out.x0 = stack([](const TrainingExample& e) -> const Tensor& { return e.x0; });
    out.cond.agnostic = stack([](const TrainingExample& e) -> const Tensor& { return e.cond.agnostic; });
    out.cond.garment = stack([](const TrainingExample& e) -> const Tensor& { return e.cond.garment; });
    out.cond.person_pose =
        stack([](const TrainingExample& e) -> const Tensor& { return e.cond.person_pose; });
    out.cond.garment_pose =
        stack([](const TrainingExample& e) -> const Tensor& { return e.cond.garment_pose; });
    return out;
}

std::vector<EvalPair> pair_for_eval(const std::vector<SyntheticScene>& scenes, uint64_t seed,
                                    int64_t pairs_per_scene) {
    const int64_t n = int64_t(scenes.size());
    if (n < 2) throw InvalidArgument("pair_for_eval: need at least 2 scenes");
    if (pairs_per_scene < 1) throw InvalidArgument("pair_for_eval: pairs_per_scene must be >= 1");
    if (n - 1 < pairs_per_scene)
        throw InvalidArgument("pair_for_eval: cannot draw " + std::to_string(pairs_per_scene) +
                              " distinct other scenes from " + std::to_string(n));
    Rng rng(Rng::hash_combine(seed, 0x70616972ULL));  // "pair" stream
    std::vector<EvalPair> pairs;
    for (int64_t i = 0; i < n; ++i) {
        // partial Fisher-Yates over the other scene ids
        std::vector<int64_t> others;
        others.reserve(size_t(n - 1));
        for (int64_t j = 0; j < n; ++j)
            if (j != i) others.push_back(j);
        for (int64_t k = 0; k < pairs_per_scene; ++k) {
            const int64_t pick = k + int64_t(rng.uniform_int(0, int64_t(others.size()) - 1 - k));
            std::swap(others[size_t(k)], others[size_t(pick)]);
            const int64_t g = others[size_t(k)];
            const int64_t frame = int64_t(rng.uniform_int(0, scenes[size_t(g)].T - 1));
            pairs.push_back({i, g, frame});
        }
    }
    return pairs;
}

}  // namespace vton::data
