#include "eval/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "core/version.hpp"
#include "guidance/guidance.hpp"
#include "model/checkpoint.hpp"
#include "nn/autodiff.hpp"
#include "sampler/sampler.hpp"

namespace vton::eval {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kGrid = 4;           // pooling grid per side
constexpr double kRidge = 1e-6;        // always added to covariance diagonals
constexpr double kPsdTol = 1e-8;       // relative non-PSD tolerance
constexpr int64_t kEncoderMid = 8;     // conv trunk hidden channels
constexpr int64_t kEncoderOut = 16;    // conv trunk descriptor length

void check_clip(const Tensor& clip, const char* who) {
    if (clip.ndim() != 4 || clip.dim(3) != 3)
        throw InvalidArgument(std::string(who) + ": expected a [T,H,W,3] clip, got " +
                              shape_str(clip.shape()));
    for (int i = 0; i < 4; ++i)
        if (clip.dim(i) < 1)
            throw InvalidArgument(std::string(who) + ": empty axis in " + shape_str(clip.shape()));
}

// Grid-cell means per channel plus per-channel mean and standard deviation.
std::vector<double> grid_descriptor(const double* px, int64_t H, int64_t W) {
    std::vector<double> out(kGrid * kGrid * 3 + 6, 0.0);
    std::vector<int64_t> cell_count(kGrid * kGrid, 0);
    double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
    for (int64_t y = 0; y < H; ++y) {
        const int64_t gy = std::min(y * kGrid / H, kGrid - 1);
        for (int64_t x = 0; x < W; ++x) {
            const int64_t gx = std::min(x * kGrid / W, kGrid - 1);
            const int64_t cell = gy * kGrid + gx;
            ++cell_count[size_t(cell)];
            for (int64_t c = 0; c < 3; ++c) {
                const double v = px[(y * W + x) * 3 + c];
                out[size_t(cell * 3 + c)] += v;
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
    }
    for (int64_t cell = 0; cell < kGrid * kGrid; ++cell)
        if (cell_count[size_t(cell)] > 0)
            for (int64_t c = 0; c < 3; ++c)
                out[size_t(cell * 3 + c)] /= double(cell_count[size_t(cell)]);
    const double n = double(H * W);
    for (int64_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / n;
        out[size_t(kGrid * kGrid * 3 + c)] = mean;
        out[size_t(kGrid * kGrid * 3 + 3 + c)] = std::sqrt(std::max(0.0, sumsq[c] / n - mean * mean));
    }
    return out;
}

// Runs the conv trunk on one [H,W,3] frame and mean-pools each channel.
std::vector<double> conv_descriptor(const FeatureExtractor& fx, const double* px, int64_t H,
                                    int64_t W) {
    nn::NoGradGuard ng;
    Tensor frame({1, H, W, 3});
    std::copy(px, px + H * W * 3, frame.data());
    nn::Var h = nn::conv2d(nn::constant(std::move(frame)), nn::constant(fx.conv1_w),
                           nn::constant(fx.conv1_b), 2, 1);
    h = nn::silu(h);
    h = nn::conv2d(h, nn::constant(fx.conv2_w), nn::constant(fx.conv2_b), 2, 1);
    h = nn::silu(h);
    const Tensor& a = h->value;
    const int64_t cells = a.dim(1) * a.dim(2);
    const int64_t C = a.dim(3);
    std::vector<double> out(size_t(C), 0.0);
    for (int64_t i = 0; i < cells; ++i)
        for (int64_t c = 0; c < C; ++c) out[size_t(c)] += a[i * C + c];
    for (auto& v : out) v /= double(cells);
    return out;
}

std::vector<double> descriptor(const FeatureExtractor& fx, const double* px, int64_t H, int64_t W) {
    return fx.has_conv_trunk() ? conv_descriptor(fx, px, H, W) : grid_descriptor(px, H, W);
}

// y = P d, rows of P indexing output features.
void project_into(const Tensor& P, const std::vector<double>& d, std::vector<double>& out) {
    const int64_t rows = P.dim(0), cols = P.dim(1);
    if (cols != int64_t(d.size()))
        throw InvalidArgument("feature projection expects a descriptor of length " +
                              std::to_string(cols) + ", got " + std::to_string(d.size()));
    for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t c = 0; c < cols; ++c) acc += P[r * cols + c] * d[size_t(c)];
        out.push_back(acc);
    }
}

Tensor random_projection(int64_t rows, int64_t cols, Rng& rng) {
    Tensor P({rows, cols});
    const double scale = 1.0 / std::sqrt(double(cols));
    for (int64_t i = 0; i < P.numel(); ++i) P[i] = rng.normal() * scale;
    return P;
}

uint64_t hash_tensor(uint64_t h, const Tensor& t) {
    return npy::fnv1a_bytes(t.data(), size_t(t.numel()) * sizeof(double), h);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

// ---- FeatureExtractor ----

int64_t FeatureExtractor::dim() const {
    return (proj.numel() > 0 ? proj.dim(0) : 0) +
           (proj_temp.numel() > 0 ? proj_temp.dim(0) : 0);
}

uint64_t FeatureExtractor::param_hash() const {
    uint64_t h = npy::fnv1a_bytes(name.data(), name.size());
    const char sc = scope == ExtractorScope::Frame ? 'f' : 'v';
    h = npy::fnv1a_bytes(&sc, 1, h);
    for (const Tensor* t : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &proj, &proj_temp})
        h = hash_tensor(h, *t);
    return h;
}

std::string FeatureExtractor::identity() const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(param_hash()));
    return name + "#" + buf;
}

void FeatureExtractor::validate() const {
    if (name.empty()) throw InvalidArgument("feature extractor must be named");
    if (proj.numel() == 0 || proj.ndim() != 2)
        throw InvalidArgument("feature extractor needs a 2-D projection matrix");
    if (scope == ExtractorScope::Video && (proj_temp.numel() == 0 || proj_temp.ndim() != 2))
        throw InvalidArgument("video extractors need a temporal-difference projection");
    if (scope == ExtractorScope::Frame && proj_temp.numel() != 0)
        throw InvalidArgument("frame extractors must not carry a temporal projection");
    if (has_conv_trunk() && (conv2_w.numel() == 0 || conv1_w.ndim() != 4 || conv2_w.ndim() != 4))
        throw InvalidArgument("conv trunk requires both [KH,KW,C,OC] kernels");
}

std::vector<double> FeatureExtractor::extract(const Tensor& clip) const {
    validate();
    check_clip(clip, "extract");
    const int64_t T = clip.dim(0), H = clip.dim(1), W = clip.dim(2);
    std::vector<double> out;
    out.reserve(size_t(dim()));
    if (scope == ExtractorScope::Frame) {
        if (T != 1)
            throw InvalidArgument("frame extractor expects a single frame, got T=" +
                                  std::to_string(T));
        project_into(proj, descriptor(*this, clip.data(), H, W), out);
        return out;
    }
    if (T < 2) throw InvalidArgument("video extractor needs at least 2 frames");

    // Order-invariant content branch: mean of per-frame descriptors.
    std::vector<double> mean_desc;
    for (int64_t t = 0; t < T; ++t) {
        const auto d = descriptor(*this, clip.data() + t * H * W * 3, H, W);
        if (mean_desc.empty()) mean_desc.assign(d.size(), 0.0);
        for (size_t i = 0; i < d.size(); ++i) mean_desc[i] += d[i];
    }
    for (auto& v : mean_desc) v /= double(T);
    project_into(proj, mean_desc, out);

    // Order-sensitive branch: descriptor of the mean absolute difference of
    // consecutive frames (temporal-difference channel pooling).
    Tensor diff({H, W, 3});
    for (int64_t t = 0; t + 1 < T; ++t) {
        const double* a = clip.data() + t * H * W * 3;
        const double* b = clip.data() + (t + 1) * H * W * 3;
        for (int64_t i = 0; i < H * W * 3; ++i) diff[i] += std::abs(b[i] - a[i]);
    }
    for (int64_t i = 0; i < diff.numel(); ++i) diff[i] /= double(T - 1);
    project_into(proj_temp, descriptor(*this, diff.data(), H, W), out);
    return out;
}

FeatureExtractor make_random_projection_extractor(ExtractorScope scope, int64_t dim,
                                                  uint64_t seed) {
    if (dim < (scope == ExtractorScope::Video ? 2 : 1))
        throw InvalidArgument("extractor dimension too small");
    const int64_t desc = kGrid * kGrid * 3 + 6;
    FeatureExtractor fx;
    fx.scope = scope;
    Rng rng(seed);
    if (scope == ExtractorScope::Frame) {
        fx.name = "rp_frame_d" + std::to_string(dim);
        Rng r = rng.split("proj");
        fx.proj = random_projection(dim, desc, r);
    } else {
        const int64_t d_temp = dim / 2;
        fx.name = "rp_video_d" + std::to_string(dim);
        Rng r1 = rng.split("proj");
        Rng r2 = rng.split("proj_temp");
        fx.proj = random_projection(dim - d_temp, desc, r1);
        fx.proj_temp = random_projection(d_temp, desc, r2);
    }
    return fx;
}

// ---- trained conv encoder ----

namespace {

struct EncoderWeights {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b;
};

std::string encoder_cache_dir(const std::string& root, uint64_t seed) {
    return root + "/encoder_s" + std::to_string(seed);
}

bool load_encoder_cache(const std::string& dir, EncoderWeights& w) {
    if (!fs::exists(dir + "/meta.json")) return false;
    try {
        const auto meta = read_json_file(dir + "/meta.json");
        check_format_version(meta, "extractor cache");
        w.conv1_w = npy::load(dir + "/conv1_w.npy");
        w.conv1_b = npy::load(dir + "/conv1_b.npy");
        w.conv2_w = npy::load(dir + "/conv2_w.npy");
        w.conv2_b = npy::load(dir + "/conv2_b.npy");
    } catch (const std::exception&) {
        return false;  // unreadable cache: retrain and overwrite
    }
    return w.conv1_w.ndim() == 4 && w.conv2_w.ndim() == 4;
}

void save_encoder_cache(const std::string& dir, const EncoderWeights& w) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create extractor cache " + dir + ": " + ec.message());
    npy::save(dir + "/conv1_w.npy", w.conv1_w);
    npy::save(dir + "/conv1_b.npy", w.conv1_b);
    npy::save(dir + "/conv2_w.npy", w.conv2_w);
    npy::save(dir + "/conv2_b.npy", w.conv2_b);
    nlohmann::json meta;
    meta["format_version"] = kFormatVersion;
    meta["arch"] = "conv3x3x2_gap";
    write_json_file(dir + "/meta.json", meta);
}

// Trains the trunk to recognize garment colors: global-pooled trunk features
// feeding a linear head, least-squares against one-hot color targets. The
// head is discarded; the trunk becomes the descriptor.
EncoderWeights train_encoder(const std::vector<data::SyntheticScene>& scenes, uint64_t seed) {
    if (scenes.empty()) throw InvalidArgument("training an extractor requires scenes");
    constexpr int64_t kClasses = 8;
    constexpr int64_t kSteps = 150;
    constexpr int64_t kBatch = 12;
    constexpr double kLr = 3e-3;

    Rng rng(seed);
    Rng init = rng.split("init");
    auto randt = [&](Shape s, double scale) {
        Tensor t(std::move(s));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = init.normal() * scale;
        return t;
    };
    const nn::Var c1w = nn::leaf(randt({3, 3, 3, kEncoderMid}, 0.2));
    const nn::Var c1b = nn::leaf(Tensor::zeros({kEncoderMid}));
    const nn::Var c2w = nn::leaf(randt({3, 3, kEncoderMid, kEncoderOut}, 0.2));
    const nn::Var c2b = nn::leaf(Tensor::zeros({kEncoderOut}));
    const nn::Var hw = nn::leaf(randt({kEncoderOut, kClasses}, 0.3));
    const nn::Var hb = nn::leaf(Tensor::zeros({kClasses}));
    const std::vector<nn::Var> params = {c1w, c1b, c2w, c2b, hw, hb};

    // Minimal Adam; the training loop lives and dies inside this function.
    struct Mom {
        Tensor m, v;
    };
    std::vector<Mom> mom;
    for (const auto& p : params)
        mom.push_back({Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});

    Rng draw = rng.split("batches");
    const int64_t H = scenes[0].H, W = scenes[0].W;
    for (int64_t step = 1; step <= kSteps; ++step) {
        Tensor x({kBatch, H, W, 3});
        Tensor target({kBatch, kClasses});
        for (int64_t b = 0; b < kBatch; ++b) {
            const auto& sc = scenes[size_t(draw.uniform_int(0, int64_t(scenes.size()) - 1))];
            const int64_t f = draw.uniform_int(0, sc.T - 1);
            std::copy(sc.frames.data() + f * H * W * 3, sc.frames.data() + (f + 1) * H * W * 3,
                      x.data() + b * H * W * 3);
            target[b * kClasses + sc.garment_color_id] = 1.0;
        }
        nn::Var h = nn::conv2d(nn::constant(std::move(x)), c1w, c1b, 2, 1);
        h = nn::silu(h);
        h = nn::conv2d(h, c2w, c2b, 2, 1);
        h = nn::silu(h);
        // Global average pool via a constant averaging matrix.
        const int64_t cells = h->value.dim(1) * h->value.dim(2);
        h = nn::reshape(h, {kBatch, cells, kEncoderOut});
        h = nn::permute(h, {0, 2, 1});
        h = nn::reshape(h, {kBatch * kEncoderOut, cells});
        h = nn::matmul(h, nn::constant(Tensor::full({cells, 1}, 1.0 / double(cells))));
        h = nn::reshape(h, {kBatch, kEncoderOut});
        const nn::Var loss = nn::mse(nn::linear(h, hw, hb), nn::constant(std::move(target)));
        nn::backward(loss);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& g = params[i]->grad;
            if (g.numel() == 0) continue;
            const double bc1 = 1.0 - std::pow(0.9, double(step));
            const double bc2 = 1.0 - std::pow(0.999, double(step));
            for (int64_t j = 0; j < g.numel(); ++j) {
                mom[i].m[j] = 0.9 * mom[i].m[j] + 0.1 * g[j];
                mom[i].v[j] = 0.999 * mom[i].v[j] + 0.001 * g[j] * g[j];
                params[i]->value[j] -=
                    kLr * (mom[i].m[j] / bc1) / (std::sqrt(mom[i].v[j] / bc2) + 1e-8);
            }
            g = Tensor();
        }
    }
    return {c1w->value, c1b->value, c2w->value, c2b->value};
}

}  // namespace

FeatureExtractor make_trained_extractor(ExtractorScope scope, int64_t dim,
                                        const std::vector<data::SyntheticScene>& scenes,
                                        uint64_t seed, const std::string& cache_dir) {
    if (cache_dir.empty()) throw InvalidArgument("trained extractor needs a cache directory");
    const std::string dir = encoder_cache_dir(cache_dir, seed);
    EncoderWeights w;
    if (!load_encoder_cache(dir, w)) {
        w = train_encoder(scenes, seed);
        save_encoder_cache(dir, w);
    }
    FeatureExtractor fx = make_random_projection_extractor(scope, dim, seed);
    fx.name = (scope == ExtractorScope::Frame ? "conv_encoder_frame_d" : "conv_encoder_video_d") +
              std::to_string(dim);
    fx.conv1_w = w.conv1_w;
    fx.conv1_b = w.conv1_b;
    fx.conv2_w = w.conv2_w;
    fx.conv2_b = w.conv2_b;
    // Re-shape the projections for the trunk's descriptor length.
    Rng rng(seed);
    Rng r1 = rng.split("conv_proj");
    fx.proj = random_projection(fx.proj.dim(0), kEncoderOut, r1);
    if (scope == ExtractorScope::Video) {
        Rng r2 = rng.split("conv_proj_temp");
        fx.proj_temp = random_projection(fx.proj_temp.dim(0), kEncoderOut, r2);
    }
    return fx;
}

FeatureExtractor make_default_extractor(ExtractorScope scope, int64_t dim,
                                        const std::vector<data::SyntheticScene>& scenes,
                                        uint64_t seed) {
    const char* cache = std::getenv("VTON_LAB_CACHE");
    if (cache != nullptr && *cache != '\0' && !scenes.empty())
        return make_trained_extractor(scope, dim, scenes, seed, cache);
    return make_random_projection_extractor(scope, dim, seed);
}

// ---- GaussianStats / Frechet ----

GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features) {
    if (features.empty()) throw InvalidArgument("fit_gaussian: no samples");
    const int64_t d = int64_t(features[0].size());
    if (d < 1) throw InvalidArgument("fit_gaussian: zero-dimensional features");
    for (const auto& f : features)
        if (int64_t(f.size()) != d)
            throw InvalidArgument("fit_gaussian: inconsistent feature dimensions");

    const int64_t n = int64_t(features.size());
    GaussianStats s;
    s.count = n;
    s.ridge_flagged = n < d + 1;
    s.mean = Tensor({d});
    for (const auto& f : features)
        for (int64_t i = 0; i < d; ++i) s.mean[i] += f[size_t(i)];
    for (int64_t i = 0; i < d; ++i) s.mean[i] /= double(n);

    s.cov = Tensor({d, d});
    std::vector<double> centered(size_t(d), 0.0);
    for (const auto& f : features) {
        for (int64_t i = 0; i < d; ++i) centered[size_t(i)] = f[size_t(i)] - s.mean[i];
        for (int64_t i = 0; i < d; ++i) {
            const double ci = centered[size_t(i)];
            for (int64_t j = i; j < d; ++j) s.cov[i * d + j] += ci * centered[size_t(j)];
        }
    }
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i; j < d; ++j) {
            const double v = s.cov[i * d + j] / double(n);
            s.cov[i * d + j] = v;
            s.cov[j * d + i] = v;
        }
    for (int64_t i = 0; i < d; ++i) s.cov[i * d + i] += kRidge;
    return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    const int64_t d = a.dim();
    if (d != b.dim())
        throw InvalidArgument("frechet_distance: dimension mismatch (" + std::to_string(d) +
                              " vs " + std::to_string(b.dim()) + ")");
    if (a.cov.numel() != d * d || b.cov.numel() != d * d)
        throw InvalidArgument("frechet_distance: covariance shape mismatch");

    Eigen::MatrixXd Sa(d, d), Sb(d, d);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < d; ++j) {
            Sa(i, j) = a.cov[i * d + j];
            Sb(i, j) = b.cov[i * d + j];
        }
    Sa = ((Sa + Sa.transpose()) / 2.0).eval();
    Sb = ((Sb + Sb.transpose()) / 2.0).eval();

    const auto check_psd = [](const Eigen::VectorXd& ev, const char* which) {
        const double scale = std::max(1.0, std::abs(ev(ev.size() - 1)));
        if (ev(0) < -kPsdTol * scale)
            throw NumericError(std::string("frechet_distance: ") + which +
                               " is not PSD (min eigenvalue " + std::to_string(ev(0)) + ")");
    };

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(Sa);
    check_psd(ea.eigenvalues(), "first covariance");
    const Eigen::MatrixXd root =
        ea.eigenvectors() *
        ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();

    Eigen::MatrixXd M = root * Sb * root;
    M = ((M + M.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(M);
    check_psd(em.eigenvalues(), "product covariance");

    double trace_root = 0.0;
    for (int64_t i = 0; i < d; ++i) trace_root += std::sqrt(std::max(0.0, em.eigenvalues()(i)));

    double mean_term = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double delta = a.mean[i] - b.mean[i];
        mean_term += delta * delta;
    }
    return std::max(0.0, mean_term + Sa.trace() + Sb.trace() - 2.0 * trace_root);
}

// ---- clip metrics ----

namespace {

// One extraction job per sample; threads fill disjoint slots so the order of
// the feature list (and every reduction over it) never depends on timing.
std::vector<std::vector<double>> extract_features(const std::vector<Tensor>& clips,
                                                  const FeatureExtractor& fx, bool per_frame,
                                                  int workers) {
    std::vector<std::pair<int64_t, int64_t>> jobs;  // (clip index, frame or -1)
    for (int64_t c = 0; c < int64_t(clips.size()); ++c) {
        check_clip(clips[size_t(c)], "metric input");
        if (per_frame)
            for (int64_t t = 0; t < clips[size_t(c)].dim(0); ++t) jobs.emplace_back(c, t);
        else
            jobs.emplace_back(c, -1);
    }
    std::vector<std::vector<double>> out(jobs.size());
    const auto run = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const auto [c, t] = jobs[i];
            const Tensor& clip = clips[size_t(c)];
            if (t < 0) {
                out[i] = fx.extract(clip);
            } else {
                const int64_t H = clip.dim(1), W = clip.dim(2);
                Tensor frame({1, H, W, 3});
                std::copy(clip.data() + t * H * W * 3, clip.data() + (t + 1) * H * W * 3,
                          frame.data());
                out[i] = fx.extract(frame);
            }
        }
    };
    if (workers <= 1 || jobs.size() < 2) {
        run(0, jobs.size());
        return out;
    }
    const size_t n_threads = std::min(size_t(workers), jobs.size());
    std::vector<std::thread> pool;
    const size_t chunk = (jobs.size() + n_threads - 1) / n_threads;
    for (size_t k = 0; k < n_threads; ++k)
        pool.emplace_back(run, k * chunk, std::min(jobs.size(), (k + 1) * chunk));
    for (auto& th : pool) th.join();
    return out;
}

double distribution_distance(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                             const FeatureExtractor& fx, ExtractorScope want, bool per_frame,
                             MetricFlags* flags, int workers) {
    if (real.empty() || generated.empty())
        throw InvalidArgument("distribution metrics need at least one clip per side");
    if (fx.scope != want)
        throw InvalidArgument(std::string("extractor scope mismatch: need a ") +
                              (want == ExtractorScope::Frame ? "frame" : "video") + " extractor");
    const auto fr = fit_gaussian(extract_features(real, fx, per_frame, workers));
    const auto fg = fit_gaussian(extract_features(generated, fx, per_frame, workers));
    if (flags != nullptr) {
        flags->ridge_flagged_real = fr.ridge_flagged;
        flags->ridge_flagged_generated = fg.ridge_flagged;
    }
    return frechet_distance(fr, fg);
}

}  // namespace

double fid_frames(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                  const FeatureExtractor& fx, MetricFlags* flags, int workers) {
    return distribution_distance(real, generated, fx, ExtractorScope::Frame, true, flags, workers);
}

double fvd_videos(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                  const FeatureExtractor& fx, MetricFlags* flags, int workers) {
    return distribution_distance(real, generated, fx, ExtractorScope::Video, false, flags,
                                 workers);
}

// ---- garment similarity ----

Tensor segment_by_color(const Tensor& frame, const SegmenterConfig& cfg) {
    if (frame.ndim() != 3 || frame.dim(2) != 3)
        throw InvalidArgument("segment_by_color: expected [H,W,3], got " +
                              shape_str(frame.shape()));
    if (cfg.tolerance <= 0.0) throw InvalidArgument("segment tolerance must be positive");
    const int64_t H = frame.dim(0), W = frame.dim(1);
    Tensor mask({H, W});
    for (int64_t i = 0; i < H * W; ++i) {
        double d2 = 0.0;
        for (int64_t c = 0; c < 3; ++c) {
            const double delta = frame[i * 3 + c] - cfg.target[size_t(c)];
            d2 += delta * delta;
        }
        mask[i] = d2 <= cfg.tolerance * cfg.tolerance ? 1.0 : 0.0;
    }
    return mask;
}

std::vector<double> GarmentEmbedder::embed(const Tensor& frame, const Tensor& mask) const {
    if (bins < 2) throw InvalidArgument("hue histogram needs at least 2 bins");
    if (frame.ndim() != 3 || frame.dim(2) != 3 || mask.ndim() != 2 ||
        mask.dim(0) != frame.dim(0) || mask.dim(1) != frame.dim(1))
        throw InvalidArgument("embed: frame [H,W,3] and mask [H,W] must agree");
    std::vector<double> hist(size_t(bins) + 1, 0.0);  // trailing achromatic bucket
    int64_t count = 0;
    const int64_t n = frame.dim(0) * frame.dim(1);
    for (int64_t i = 0; i < n; ++i) {
        if (mask[i] < 0.5) continue;
        ++count;
        const double r = std::clamp((frame[i * 3 + 0] + 1.0) / 2.0, 0.0, 1.0);
        const double g = std::clamp((frame[i * 3 + 1] + 1.0) / 2.0, 0.0, 1.0);
        const double b = std::clamp((frame[i * 3 + 2] + 1.0) / 2.0, 0.0, 1.0);
        const double mx = std::max({r, g, b});
        const double mn = std::min({r, g, b});
        const double c = mx - mn;
        if (c < 1e-9) {
            hist[size_t(bins)] += 1.0;
            continue;
        }
        double h6;
        if (mx == r)
            h6 = std::fmod((g - b) / c + 6.0, 6.0);
        else if (mx == g)
            h6 = (b - r) / c + 2.0;
        else
            h6 = (r - g) / c + 4.0;
        const int64_t bin = std::min(bins - 1, int64_t(h6 / 6.0 * double(bins)));
        hist[size_t(bin)] += 1.0;
    }
    if (count == 0) throw InvalidArgument("embed: empty mask");
    for (auto& v : hist) v /= double(count);
    return hist;
}

double garment_similarity(const Tensor& garment_rgba, const Tensor& generated,
                          const SegmenterConfig& seg, const GarmentEmbedder& emb) {
    if (garment_rgba.ndim() != 3 || garment_rgba.dim(2) != 4)
        throw InvalidArgument("garment_similarity: garment image must be [H,W,4] (RGB + mask)");
    check_clip(generated, "garment_similarity");

    const int64_t gh = garment_rgba.dim(0), gw = garment_rgba.dim(1);
    Tensor grgb({gh, gw, 3});
    Tensor gmask({gh, gw});
    for (int64_t i = 0; i < gh * gw; ++i) {
        for (int64_t c = 0; c < 3; ++c) grgb[i * 3 + c] = garment_rgba[i * 4 + c];
        gmask[i] = garment_rgba[i * 4 + 3] >= 0.5 ? 1.0 : 0.0;
    }
    bool any = false;
    for (int64_t i = 0; i < gh * gw && !any; ++i) any = gmask[i] > 0.5;
    if (!any) throw NumericError("garment_similarity: the garment image mask is empty");
    const auto ref = emb.embed(grgb, gmask);
    const double ref_norm = std::sqrt(dot(ref, ref));

    const int64_t T = generated.dim(0), H = generated.dim(1), W = generated.dim(2);
    double sum = 0.0;
    int64_t scored = 0;
    for (int64_t t = 0; t < T; ++t) {
        Tensor frame({H, W, 3});
        std::copy(generated.data() + t * H * W * 3, generated.data() + (t + 1) * H * W * 3,
                  frame.data());
        const Tensor mask = segment_by_color(frame, seg);
        double pixels = 0.0;
        for (int64_t i = 0; i < H * W; ++i) pixels += mask[i];
        if (pixels == 0.0) continue;
        const auto e = emb.embed(frame, mask);
        const double n = std::sqrt(dot(e, e));
        sum += dot(ref, e) / (ref_norm * n);
        ++scored;
    }
    if (scored == 0)
        throw NumericError(
            "garment_similarity: the segmenter found no garment pixels in any frame; the score "
            "is undefined");
    return sum / double(scored);
}

// ---- ablation suite ----

namespace {

// Mean color of the garment image's masked pixels: the segmentation target
// for generated frames, derived without ground-truth labels.
SegmenterConfig segmenter_for(const Tensor& garment_rgba, double tolerance) {
    SegmenterConfig cfg;
    cfg.tolerance = tolerance;
    double sum[3] = {0, 0, 0};
    int64_t count = 0;
    const int64_t n = garment_rgba.dim(0) * garment_rgba.dim(1);
    for (int64_t i = 0; i < n; ++i) {
        if (garment_rgba[i * 4 + 3] < 0.5) continue;
        ++count;
        for (int64_t c = 0; c < 3; ++c) sum[c] += garment_rgba[i * 4 + c];
    }
    if (count > 0)
        for (int64_t c = 0; c < 3; ++c) cfg.target[size_t(c)] = sum[c] / double(count);
    return cfg;
}

Tensor drop_batch_axis(const Tensor& t) {
    Shape s(t.shape().begin() + 1, t.shape().end());
    return t.reshaped(std::move(s));
}

}  // namespace

AblationResult run_ablation_suite(const std::vector<std::string>& checkpoints,
                                  const std::vector<data::SyntheticScene>& scenes,
                                  const AblationConfig& cfg) {
    if (checkpoints.empty())
        throw InvalidArgument("run_ablation_suite: need at least one checkpoint");
    for (const auto& dir : checkpoints)
        if (!fs::exists(dir + "/manifest.json"))
            throw InvalidArgument("run_ablation_suite: missing checkpoint " + dir);
    if (scenes.size() < 2)
        throw InvalidArgument("run_ablation_suite: need at least two scenes for pairing");
    if (cfg.num_pairs < 1 || cfg.frames < 1 || cfg.sample_steps < 1 || cfg.workers < 1)
        throw InvalidArgument("run_ablation_suite: pairs, frames, steps, workers must be >= 1");
    if (cfg.num_pairs > int64_t(scenes.size()))
        throw InvalidArgument("run_ablation_suite: more pairs requested than scenes available");
    for (const auto& sc : scenes)
        if (sc.T < cfg.frames)
            throw InvalidArgument("run_ablation_suite: scenes are shorter than the clip length");

    const auto sched = diffusion::make_schedule(cfg.schedule_steps, cfg.schedule_kind);
    const auto pairs_all = data::pair_for_eval(scenes, cfg.seed, 1);
    const std::vector<data::EvalPair> pairs(pairs_all.begin(),
                                            pairs_all.begin() + cfg.num_pairs);

    AblationResult result;
    result.seed = cfg.seed;
    FeatureExtractor frame_fx =
        cfg.frame_fx.proj.numel() > 0
            ? cfg.frame_fx
            : make_default_extractor(ExtractorScope::Frame, cfg.feature_dim, scenes, cfg.seed);
    FeatureExtractor video_fx =
        cfg.video_fx.proj.numel() > 0
            ? cfg.video_fx
            : make_default_extractor(ExtractorScope::Video, cfg.feature_dim, scenes,
                                     cfg.seed + 1);
    frame_fx.validate();
    video_fx.validate();
    result.frame_extractor = frame_fx.identity();
    result.video_extractor = video_fx.identity();
    result.embedder = cfg.embedder.name();

    // Shared evaluation material: conditioning, ground-truth clips, and one
    // sampling seed per pair, identical for every checkpoint row.
    std::vector<data::TrainingExample> examples;
    std::vector<Tensor> real_clips;
    std::vector<uint64_t> pair_seeds;
    const Rng base(cfg.seed);
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        examples.push_back(data::make_example(scenes[size_t(p.person_scene)], 0, cfg.frames,
                                              scenes[size_t(p.garment_scene)], p.garment_frame));
        real_clips.push_back(drop_batch_axis(examples.back().x0));
        pair_seeds.push_back(base.split("pair." + std::to_string(i)).next_u64());
    }

    bool noted_fid = false, noted_fvd = false;
    for (const auto& dir : checkpoints) {
        const auto loaded = model::load_checkpoint(dir);
        AblationRow row;
        row.name = fs::path(dir).filename().string();

        std::vector<Tensor> gen_clips;
        double sim_sum = 0.0;
        int64_t sim_count = 0;
        for (size_t i = 0; i < pairs.size(); ++i) {
            sampler::SamplerConfig sc;
            sc.num_steps = cfg.sample_steps;
            sc.seed = pair_seeds[i];
            sc.prediction_target = loaded.model.config.prediction_target;
            sc.guidance = guidance::make_tryon_schedule(cfg.cfg_weights[0], cfg.cfg_weights[1],
                                                        cfg.cfg_weights[2], cfg.cfg_weights[3]);
            const Tensor& x0 = examples[i].x0;
            const Shape shape = {1, cfg.frames, x0.dim(2), x0.dim(3), 3};
            const Tensor video =
                sampler::ddpm_sample(loaded.model, examples[i].cond, shape, sc, sched);
            gen_clips.push_back(drop_batch_axis(video));

            const Tensor garment = drop_batch_axis(examples[i].cond.garment);
            try {
                sim_sum += garment_similarity(garment, gen_clips.back(),
                                              segmenter_for(garment, cfg.segment_tolerance),
                                              cfg.embedder);
                ++sim_count;
            } catch (const NumericError&) {
                // Undefined for this pair (garment never detected); the row
                // averages the defined pairs.
            }
        }
        if (sim_count == 0)
            throw NumericError("run_ablation_suite: garment similarity undefined for '" +
                               row.name + "' on every pair");

        MetricFlags fid_flags, fvd_flags;
        row.fid = fid_frames(real_clips, gen_clips, frame_fx, &fid_flags, cfg.workers);
        row.fvd = fvd_videos(real_clips, gen_clips, video_fx, &fvd_flags, cfg.workers);
        row.garment_sim = sim_sum / double(sim_count);
        result.rows.push_back(std::move(row));

        if (!noted_fid && (fid_flags.ridge_flagged_real || fid_flags.ridge_flagged_generated)) {
            result.notes.push_back("fid: fewer samples than feature dim + 1; ridge-backed");
            noted_fid = true;
        }
        if (!noted_fvd && (fvd_flags.ridge_flagged_real || fvd_flags.ridge_flagged_generated)) {
            result.notes.push_back("fvd: fewer samples than feature dim + 1; ridge-backed");
            noted_fvd = true;
        }
    }
    return result;
}

nlohmann::json score_table_json(const AblationResult& result) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["seed"] = result.seed;
    j["frame_extractor"] = result.frame_extractor;
    j["video_extractor"] = result.video_extractor;
    j["embedder"] = result.embedder;
    j["columns"] = {"fid", "fvd", "garment_sim"};
    j["rows"] = nlohmann::json::array();
    for (const auto& row : result.rows) {
        nlohmann::json r;
        r["name"] = row.name;
        r["fid"] = row.fid;
        r["fvd"] = row.fvd;
        r["garment_sim"] = row.garment_sim;
        j["rows"].push_back(std::move(r));
    }
    j["notes"] = result.notes;
    return j;
}

std::string render_score_table(const AblationResult& result) {
    size_t name_w = std::string("checkpoint").size();
    for (const auto& row : result.rows) name_w = std::max(name_w, row.name.size());
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-*s %12s %12s %12s\n", int(name_w), "checkpoint", "fid",
                  "fvd", "garment_sim");
    out += buf;
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof(buf), "%-*s %12.6f %12.6f %12.6f\n", int(name_w),
                      row.name.c_str(), row.fid, row.fvd, row.garment_sim);
        out += buf;
    }
    out += "frame extractor: " + result.frame_extractor + "\n";
    out += "video extractor: " + result.video_extractor + "\n";
    out += "embedder: " + result.embedder + "\n";
    for (const auto& n : result.notes) out += "note: " + n + "\n";
    return out;
}

void write_score_table(const AblationResult& result, const std::string& json_path,
                       const std::string& text_path) {
    write_json_file(json_path, score_table_json(result));
    std::ofstream out(text_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open score table " + text_path);
    out << render_score_table(result);
    if (!out) throw IoError("failed writing score table " + text_path);
}

}  // namespace vton::eval
