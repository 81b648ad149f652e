#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"
#include "data/synthetic.hpp"
#include "diffusion/schedule.hpp"

namespace vton::eval {

// ---- feature extraction ----

enum class ExtractorScope { Frame, Video };

// A pure map from a frame or a whole clip to a fixed-length feature vector.
// Two backends share the struct: a fixed seeded random projection over a
// hand-rolled pooled descriptor (conv weights empty), and a small trained
// convolutional encoder (conv weights present). Video-scope extractors add a
// temporal-difference pooling branch so they are sensitive to frame order;
// frame-scope extractors see exactly one frame per call.
struct FeatureExtractor {
    std::string name;
    ExtractorScope scope = ExtractorScope::Frame;

    // Optional two-layer conv trunk, layout per nn::conv2d ([KH,KW,C,OC]).
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;

    // Fixed projections from the pooled descriptor to the feature space.
    Tensor proj;       // [d_frame, descriptor_dim]
    Tensor proj_temp;  // video scope only: [d_temp, descriptor_dim]

    int64_t dim() const;  // d_frame (+ d_temp for video scope)
    bool has_conv_trunk() const { return conv1_w.numel() > 0; }
    uint64_t param_hash() const;
    // Stable identity recorded next to every score: "<name>#<param hash>".
    std::string identity() const;
    void validate() const;  // throws InvalidArgument

    // clip is [T,H,W,3]; frame scope requires T == 1, video scope T >= 2.
    std::vector<double> extract(const Tensor& clip) const;
};

FeatureExtractor make_random_projection_extractor(ExtractorScope scope, int64_t dim,
                                                  uint64_t seed);

// Trains a small conv encoder to identify garment colors on the given scenes
// (or loads it from `cache_dir` when a previous run left one there) and wraps
// it as an extractor. Training is deterministic in `seed`.
FeatureExtractor make_trained_extractor(ExtractorScope scope, int64_t dim,
                                        const std::vector<data::SyntheticScene>& scenes,
                                        uint64_t seed, const std::string& cache_dir);

// Default policy: the trained encoder when the VTON_LAB_CACHE environment
// variable names a cache directory, the random projection otherwise.
FeatureExtractor make_default_extractor(ExtractorScope scope, int64_t dim,
                                        const std::vector<data::SyntheticScene>& scenes,
                                        uint64_t seed);

// ---- moment statistics and the Frechet metric ----

struct GaussianStats {
    Tensor mean;  // [d]
    Tensor cov;   // [d,d], symmetric, always ridge-regularized (+1e-6 I)
    int64_t count = 0;
    // Set when count < d+1: the sample covariance is rank-deficient and the
    // score leans on the ridge.
    bool ridge_flagged = false;

    int64_t dim() const { return mean.numel(); }
};

// Fits mean and population covariance in deterministic (index) order.
GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the matrix square root
// computed by eigendecomposition of sqrt(Sa) Sb sqrt(Sa) with negative
// eigenvalues clamped at zero. Symmetric in its arguments; >= 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// ---- distribution metrics over clips ----

struct MetricFlags {
    bool ridge_flagged_real = false;
    bool ridge_flagged_generated = false;
};

// Frame-level distribution distance: every frame of every clip is one sample.
// Clips are [T,H,W,3]; extraction runs in clip-major, frame-minor order and
// parallelizes over samples without changing the reduction order.
double fid_frames(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                  const FeatureExtractor& fx, MetricFlags* flags = nullptr, int workers = 1);

// Clip-level distribution distance: whole clips are the samples.
double fvd_videos(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                  const FeatureExtractor& fx, MetricFlags* flags = nullptr, int workers = 1);

// ---- garment similarity ----

// Picks out pixels whose color lies within `tolerance` (Euclidean RGB
// distance, channels in [-1,1]) of the target color.
struct SegmenterConfig {
    std::array<double, 3> target{0.0, 0.0, 0.0};
    double tolerance = 0.6;
};

// [H,W,3] frame -> [H,W] mask in {0,1}.
Tensor segment_by_color(const Tensor& frame, const SegmenterConfig& cfg);

// Embeds the masked region of a frame as a normalized hue histogram with one
// extra bucket for achromatic pixels. Mask-size invariant.
struct GarmentEmbedder {
    int64_t bins = 12;

    std::string name() const { return "hue_histogram_" + std::to_string(bins); }
    // frame [H,W,3], mask [H,W]; requires a non-empty mask.
    std::vector<double> embed(const Tensor& frame, const Tensor& mask) const;
};

// Mean over frames of the cosine similarity between the garment-image
// embedding and the segmented garment crop of each generated frame. The
// garment image is [H,W,4] (RGB plus its own mask channel); the video is
// [T,H,W,3]. Frames where the segmenter finds nothing are skipped; if that
// happens in every frame (or the garment's own mask is empty) the score is
// undefined and a NumericError is thrown. Result lies in [-1, 1] and is
// invariant to frame order.
double garment_similarity(const Tensor& garment_rgba, const Tensor& generated,
                          const SegmenterConfig& seg, const GarmentEmbedder& emb);

// ---- ablation comparison harness ----

struct AblationConfig {
    int64_t num_pairs = 2;    // person/garment eval pairs, shared by all rows
    int64_t frames = 4;       // sampled clip length
    int64_t sample_steps = 8;
    int64_t schedule_steps = 50;
    diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::Cosine;
    std::array<double, 4> cfg_weights{1.0, 1.0, 1.0, 1.0};
    uint64_t seed = 0;
    int64_t feature_dim = 6;
    double segment_tolerance = 0.6;
    int workers = 1;
    GarmentEmbedder embedder;
    // Optional pre-built extractors; when left empty they are constructed via
    // make_default_extractor from the evaluation scenes.
    FeatureExtractor frame_fx, video_fx;
};

struct AblationRow {
    std::string name;  // checkpoint directory basename
    double fid = 0.0;
    double fvd = 0.0;
    double garment_sim = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // one per checkpoint, input order
    std::string frame_extractor;    // identity strings
    std::string video_extractor;
    std::string embedder;
    uint64_t seed = 0;
    std::vector<std::string> notes;  // e.g. rank-deficiency flags
};

// Samples videos for every checkpoint over the same eval pairs and the same
// per-pair seeds, then scores each checkpoint against the ground-truth clips.
// Deterministic given (checkpoints, scenes, config).
AblationResult run_ablation_suite(const std::vector<std::string>& checkpoints,
                                  const std::vector<data::SyntheticScene>& scenes,
                                  const AblationConfig& cfg);

// Fixed column order {fid, fvd, garment_sim}, plus extractor identities.
nlohmann::json score_table_json(const AblationResult& result);
std::string render_score_table(const AblationResult& result);
void write_score_table(const AblationResult& result, const std::string& json_path,
                       const std::string& text_path);

}  // namespace vton::eval
