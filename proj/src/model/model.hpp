#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data/synthetic.hpp"
#include "nn/layers.hpp"

namespace vton::model {

// What the denoiser is trained to emit. Conversions to/from x0 and noise
// live in the diffusion schedule helpers; the network itself only carries
// the label around.
enum class PredictionTarget { V, Epsilon };
PredictionTarget prediction_target_from_string(const std::string& s);
std::string to_string(PredictionTarget p);

struct ModelConfig {
    int64_t base_channels = 32;
    std::vector<int64_t> channel_multipliers = {1, 2, 4};  // one per resolution level
    int64_t num_dit_blocks = 8;
    int64_t attention_heads = 4;
    int64_t pose_channels = data::kNumJoints;  // channels of the input pose maps
    bool temporal_enabled = false;
    bool temporal_resampling_enabled = false;
    int64_t frame_length = 1;  // clip length the video branch expects
    PredictionTarget prediction_target = PredictionTarget::V;

    int64_t levels() const { return static_cast<int64_t>(channel_multipliers.size()); }
    int64_t channels_at(int64_t level) const;
    // Throws InvalidArgument on inconsistent settings (e.g. resampling without
    // temporal blocks, heads not dividing the attention widths).
    void validate() const;
};

// Channel counts of the conditioning inputs the model is built against.
struct ConditioningSpec {
    int64_t image_channels = 3;
    int64_t agnostic_channels = 4;  // appearance + coverage mask
    int64_t garment_channels = 4;   // appearance + garment mask
    int64_t pose_channels = data::kNumJoints;
};

// Learned scalar blend between the per-frame (spatial) features and the
// temporally processed features. Stored pre-squashing; the hard clamp keeps
// the blend inside [0,1] while both endpoints stay exactly reachable and
// still receive gradient.
struct MixingGate {
    nn::Var raw_alpha;  // [1]
    nn::Var alpha() const { return nn::clamp01(raw_alpha); }
};

// z' = alpha * z_spatial + (1 - alpha) * z_temporal, elementwise.
nn::Var temporal_mix(const nn::Var& z_spatial, const nn::Var& z_temporal, const MixingGate& gate);

// Optional instrumentation: attach to a model to observe what a forward pass
// actually did (used by tests to count denoiser invocations and to check the
// frame count reaching the bottleneck when temporal resampling is active).
struct ForwardProbe {
    int64_t forward_calls = 0;
    // Frame count of every bottleneck-stage execution, in call order. With
    // temporal resampling the gated full-length pass records T and the
    // resampled pass records T/2.
    std::vector<int64_t> bottleneck_frame_counts;
};

enum class Branch { Image, Video };

// ---- building blocks (owned by TryOnDenoiser, parameters registered in its
// store; the structs just bundle the handles) ----
struct ConvBlock {
    nn::Conv2d c1, c2;
    nn::GroupNormLayer n1, n2;
};
struct EncBlock {  // conditioning encoders use plain conv+silu stacks
    nn::Conv2d c1, c2;
};
struct DitBlock {
    nn::Attention self_attn, cross_attn;
    nn::Linear mlp1, mlp2;
    nn::Linear ada;  // time modulation: 9 per-channel pieces (scale/shift/gate x3)
};
struct TemporalBlock {
    nn::ConvTemporal conv;
    nn::Attention attn;  // over the T axis, independently per spatial location
    MixingGate gate;
};

// Conditional video denoiser: UNet over 2-D conv blocks with DiT fusion
// blocks at the lowest resolution (garment features cross-attended, agnostic
// features concatenated), pose embeddings concatenated into every 2-D spatial
// layer, and optional temporal blocks on the two lowest-resolution levels
// plus factor-2 temporal resampling around the bottleneck.
struct TryOnDenoiser {
    ModelConfig config;
    ConditioningSpec cond_spec;
    uint64_t seed = 0;
    nn::ParamStore params;

    nn::Linear person_pose_embed, garment_pose_embed;
    nn::Var null_agnostic, null_garment, null_person_pose, null_garment_pose;
    std::vector<EncBlock> agnostic_enc, garment_enc;
    nn::Linear garment_token_proj;
    std::vector<ConvBlock> down_blocks, up_blocks;
    nn::Conv2d head;
    nn::Linear time_mlp1, time_mlp2;
    nn::Linear dit_entry;
    std::vector<DitBlock> dit_blocks;
    // index 0 = second-lowest level, index 1 = lowest level; empty when
    // temporal_enabled is false.
    std::vector<TemporalBlock> tb_down, tb_up;
    nn::ConvTemporal res_down, res_up;
    MixingGate res_gate;

    mutable ForwardProbe* probe = nullptr;

    TryOnDenoiser() = default;
    TryOnDenoiser(const TryOnDenoiser&) = delete;  // params are shared handles
    TryOnDenoiser& operator=(const TryOnDenoiser&) = delete;
    TryOnDenoiser(TryOnDenoiser&&) = default;
    TryOnDenoiser& operator=(TryOnDenoiser&&) = default;
};

// Number of channels each pose map is embedded into before concatenation.
inline constexpr int64_t kPoseEmbedChannels = 4;

TryOnDenoiser build_model(const ModelConfig& config, const ConditioningSpec& spec, uint64_t seed);

// Denoiser application. z_t is [B,T,H,W,image_channels]; t holds one
// timestep per batch element; conditioning inputs with their null flag set
// are replaced by the model's learned null embeddings and their tensor
// contents ignored. branch=Image treats the T frames as independent images
// and bypasses all temporal processing; branch=Video requires a
// temporal-enabled model and T == config.frame_length.
nn::Var forward(const TryOnDenoiser& m, const nn::Var& z_t, const std::vector<int64_t>& t,
                const data::TryOnConditioning& cond, Branch branch);

enum class InflateInit { Identity, Random };

// Extends an image-only model with temporal blocks, copying every existing
// parameter verbatim. Identity init makes the result compute exactly the
// per-frame image model (gates at alpha=1, pass-through temporal convs).
TryOnDenoiser inflate_temporal(const TryOnDenoiser& image_model, InflateInit init);

// Adds the factor-2 temporal down/up resampling path around the bottleneck
// of a temporal model. The full-length path stays in place behind a gate
// initialized to 1, so injection is function-preserving.
TryOnDenoiser inject_temporal_resampling(const TryOnDenoiser& m);

}  // namespace vton::model
