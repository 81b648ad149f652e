#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "core/jsonio.hpp"
#include "core/npy.hpp"
#include "model/checkpoint.hpp"
#include "model/model.hpp"

using namespace vton;
using namespace vton::model;
using nn::Var;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.num_dit_blocks = 1;
    c.attention_heads = 2;
    return c;
}

ModelConfig small_config() {
    ModelConfig c;
    c.base_channels = 8;
    c.channel_multipliers = {1, 2};
    c.num_dit_blocks = 2;
    c.attention_heads = 2;
    return c;
}

data::TryOnConditioning rand_cond(Rng& rng, int64_t B, int64_t T, int64_t H, int64_t W,
                                  int64_t K) {
    data::TryOnConditioning c;
    c.agnostic = Tensor::randn({B, T, H, W, 4}, rng);
    c.garment = Tensor::randn({B, H, W, 4}, rng);
    c.person_pose = Tensor::randn({B, T, H, W, K}, rng);
    c.garment_pose = Tensor::randn({B, H, W, K}, rng);
    return c;
}

// Copies frame k of the per-frame conditioning inputs into a T=1 clip.
data::TryOnConditioning slice_frame(const data::TryOnConditioning& c, int64_t k) {
    const Shape& as = c.agnostic.shape();
    const int64_t B = as[0], T = as[1], H = as[2], W = as[3];
    data::TryOnConditioning out;
    out.garment = c.garment;
    out.garment_pose = c.garment_pose;
    out.agnostic = Tensor::zeros({B, 1, H, W, as[4]});
    const int64_t ca = as[4];
    const int64_t K = c.person_pose.shape()[4];
    out.person_pose = Tensor::zeros({B, 1, H, W, K});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < H * W; ++i) {
            for (int64_t ch = 0; ch < ca; ++ch)
                out.agnostic[(b * H * W + i) * ca + ch] =
                    c.agnostic[((b * T + k) * H * W + i) * ca + ch];
            for (int64_t ch = 0; ch < K; ++ch)
                out.person_pose[(b * H * W + i) * K + ch] =
                    c.person_pose[((b * T + k) * H * W + i) * K + ch];
        }
    return out;
}

Tensor slice_z(const Tensor& z, int64_t k) {
    const Shape& s = z.shape();
    const int64_t B = s[0], T = s[1], frame = s[2] * s[3] * s[4];
    Tensor out({B, 1, s[2], s[3], s[4]});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < frame; ++i) out[b * frame + i] = z[(b * T + k) * frame + i];
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Var weighted_sum(const Var& out, uint64_t seed) {
    Rng rng(seed);
    return nn::reduce_sum_all(nn::mul(out, nn::constant(Tensor::randn(out->value.shape(), rng))));
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("vton_model_" + tag);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("build_model: group layout, determinism, block count") {
    SUBCASE("non-temporal models have empty temporal groups") {
        auto m = build_model(small_config(), ConditioningSpec{}, 1);
        CHECK(m.params.group_numel(nn::ParamGroup::Temporal) == 0);
        CHECK(m.params.group_numel(nn::ParamGroup::TemporalResampling) == 0);
        CHECK(m.params.group_numel(nn::ParamGroup::Spatial) > 0);
        CHECK(m.params.group_numel(nn::ParamGroup::Dit) > 0);
        // every parameter belongs to exactly one group: group sizes add up
        int64_t total = 0;
        for (auto g : nn::kAllParamGroups) total += m.params.group_numel(g);
        CHECK(total == m.params.total_numel());
    }
    SUBCASE("requested number of DiT blocks is instantiated") {
        ModelConfig c = tiny_config();
        c.num_dit_blocks = 8;
        auto m = build_model(c, ConditioningSpec{}, 1);
        CHECK(m.dit_blocks.size() == 8);
        CHECK(m.params.find("dit.7.mlp1.w") != nullptr);
        CHECK(m.params.find("dit.8.mlp1.w") == nullptr);
    }
    SUBCASE("same config and seed build identically") {
        auto a = build_model(small_config(), ConditioningSpec{}, 42);
        auto b = build_model(small_config(), ConditioningSpec{}, 42);
        REQUIRE(a.params.all().size() == b.params.all().size());
        for (size_t i = 0; i < a.params.all().size(); ++i) {
            const auto& pa = a.params.all()[i];
            const auto& pb = b.params.all()[i];
            CHECK(pa->name == pb->name);
            CHECK(pa->var->value.vec() == pb->var->value.vec());
        }
        auto c = build_model(small_config(), ConditioningSpec{}, 43);
        bool any_diff = false;
        for (size_t i = 0; i < a.params.all().size(); ++i)
            if (a.params.all()[i]->var->value.vec() != c.params.all()[i]->var->value.vec())
                any_diff = true;
        CHECK(any_diff);
    }
    SUBCASE("inconsistent conditioning spec is rejected") {
        ConditioningSpec s;
        s.pose_channels = 7;  // disagrees with config default
        CHECK_THROWS_AS(build_model(small_config(), s, 1), InvalidArgument);
        ConditioningSpec s2;
        s2.garment_channels = 0;
        CHECK_THROWS_AS(build_model(small_config(), s2, 1), InvalidArgument);
    }
    SUBCASE("config validation") {
        ModelConfig c = small_config();
        c.temporal_resampling_enabled = true;  // without temporal_enabled
        CHECK_THROWS_AS(build_model(c, ConditioningSpec{}, 1), InvalidArgument);
        ModelConfig c2 = small_config();
        c2.num_dit_blocks = 0;
        CHECK_THROWS_AS(build_model(c2, ConditioningSpec{}, 1), InvalidArgument);
        ModelConfig c3 = small_config();
        c3.attention_heads = 3;  // does not divide the 16 bottleneck channels
        CHECK_THROWS_AS(build_model(c3, ConditioningSpec{}, 1), InvalidArgument);
    }
}

TEST_CASE("temporal_mix endpoints and midpoint") {
    nn::ParamStore ps;
    MixingGate g;
    g.raw_alpha = ps.add("gate.alpha_raw", nn::ParamGroup::Temporal, Tensor::scalar(1.0));
    Rng rng(3);
    Var zs = nn::constant(Tensor::randn({2, 3, 4}, rng));
    Var zt = nn::constant(Tensor::randn({2, 3, 4}, rng));

    Var m1 = temporal_mix(zs, zt, g);
    CHECK(m1->value.vec() == zs->value.vec());  // alpha=1 returns the spatial features

    g.raw_alpha->value.fill(0.0);
    Var m0 = temporal_mix(zs, zt, g);
    CHECK(m0->value.vec() == zt->value.vec());  // alpha=0 returns the temporal features

    g.raw_alpha->value.fill(0.5);
    Var zs2 = nn::constant(Tensor::full({2, 2}, 2.0));
    Var zt2 = nn::constant(Tensor::full({2, 2}, 4.0));
    Var mh = temporal_mix(zs2, zt2, g);
    for (int64_t i = 0; i < 4; ++i) CHECK(mh->value[i] == doctest::Approx(3.0));

    Var bad = nn::constant(Tensor::zeros({2, 3, 5}));
    CHECK_THROWS_AS(temporal_mix(zs, bad, g), InvalidArgument);

    // raw values beyond the interval squash to the endpoints
    g.raw_alpha->value.fill(7.5);
    CHECK(temporal_mix(zs, zt, g)->value.vec() == zs->value.vec());
}

TEST_CASE("forward: shape contract and input validation") {
    auto m = build_model(small_config(), ConditioningSpec{}, 7);
    Rng rng(11);
    const int64_t B = 2, T = 3, H = 16, W = 16;
    Tensor z = Tensor::randn({B, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, B, T, H, W, 13);

    nn::NoGradGuard ng;
    Var out = forward(m, nn::constant(z), {10, 500}, cond, Branch::Image);
    CHECK(out->value.shape() == z.shape());

    CHECK_THROWS_AS(forward(m, nn::constant(z), {10, 500}, cond, Branch::Video), InvalidState);
    CHECK_THROWS_AS(forward(m, nn::constant(z), {10}, cond, Branch::Image), InvalidArgument);
    CHECK_THROWS_AS(forward(m, nn::constant(Tensor::zeros({B, T, H, W, 4})), {10, 500}, cond,
                            Branch::Image),
                    InvalidArgument);
    CHECK_THROWS_AS(forward(m, nn::constant(Tensor::zeros({B, T, 15, W, 3})), {10, 500}, cond,
                            Branch::Image),
                    InvalidArgument);
    auto bad_cond = cond;
    bad_cond.garment = Tensor::zeros({B, H, W, 5});
    CHECK_THROWS_AS(forward(m, nn::constant(z), {10, 500}, bad_cond, Branch::Image),
                    InvalidArgument);
}

TEST_CASE("forward: image branch equals an explicit per-frame loop") {
    auto img = build_model(small_config(), ConditioningSpec{}, 19);
    auto m = inflate_temporal(img, InflateInit::Random);  // temporal model, image branch
    Rng rng(23);
    const int64_t T = 8, H = 16, W = 16;
    Tensor z = Tensor::randn({1, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, 1, T, H, W, 13);

    nn::NoGradGuard ng;
    Var batched = forward(m, nn::constant(z), {321}, cond, Branch::Image);
    for (int64_t k = 0; k < T; ++k) {
        Var single =
            forward(m, nn::constant(slice_z(z, k)), {321}, slice_frame(cond, k), Branch::Image);
        double worst = 0.0;
        for (int64_t i = 0; i < single->value.numel(); ++i)
            worst = std::max(worst,
                             std::abs(single->value[i] - batched->value[k * H * W * 3 + i]));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("forward: null flags substitute learned embeddings") {
    auto m = build_model(small_config(), ConditioningSpec{}, 31);
    Rng rng(37);
    Tensor z = Tensor::randn({1, 2, 16, 16, 3}, rng);
    auto c1 = rand_cond(rng, 1, 2, 16, 16, 13);
    auto c2 = rand_cond(rng, 1, 2, 16, 16, 13);  // different contents

    nn::NoGradGuard ng;
    SUBCASE("all nulls: output ignores conditioning contents entirely") {
        for (auto* c : {&c1, &c2})
            c->null_agnostic = c->null_garment = c->null_person_pose = c->null_garment_pose = true;
        Var o1 = forward(m, nn::constant(z), {100}, c1, Branch::Image);
        Var o2 = forward(m, nn::constant(z), {100}, c2, Branch::Image);
        CHECK(o1->value.vec() == o2->value.vec());

        // even empty tensors are accepted for dropped inputs
        data::TryOnConditioning c3;
        c3.null_agnostic = c3.null_garment = c3.null_person_pose = c3.null_garment_pose = true;
        Var o3 = forward(m, nn::constant(z), {100}, c3, Branch::Image);
        CHECK(o3->value.vec() == o1->value.vec());
    }
    SUBCASE("a live garment input changes the output") {
        Var o1 = forward(m, nn::constant(z), {100}, c1, Branch::Image);
        auto c1b = c1;
        c1b.garment = c2.garment;
        Var o2 = forward(m, nn::constant(z), {100}, c1b, Branch::Image);
        CHECK(max_abs_diff(o1->value, o2->value) > 0.0);
    }
    SUBCASE("single null flag isolates that input") {
        c1.null_garment = true;
        auto c1b = c1;
        c1b.garment = c2.garment;  // ignored: flagged null
        Var o1 = forward(m, nn::constant(z), {100}, c1, Branch::Image);
        Var o2 = forward(m, nn::constant(z), {100}, c1b, Branch::Image);
        CHECK(o1->value.vec() == o2->value.vec());
    }
}

TEST_CASE("inflate_temporal: identity init preserves the image model per frame") {
    auto img = build_model(small_config(), ConditioningSpec{}, 41);
    Rng rng(43);
    const int64_t T = 4, H = 16, W = 16;
    Tensor z = Tensor::randn({1, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, 1, T, H, W, 13);

    auto vid = inflate_temporal(img, InflateInit::Identity);
    vid.config.frame_length = T;

    nn::NoGradGuard ng;
    Var a = forward(img, nn::constant(z), {77}, cond, Branch::Image);
    Var b = forward(vid, nn::constant(z), {77}, cond, Branch::Video);
    CHECK(max_abs_diff(a->value, b->value) < 1e-5);

    SUBCASE("spatial parameters are copied bitwise") {
        for (const auto& p : img.params.all()) {
            auto q = vid.params.find(p->name);
            REQUIRE(q != nullptr);
            CHECK(q->var->value.vec() == p->var->value.vec());
        }
    }
    SUBCASE("inflating twice is invalid") {
        CHECK_THROWS_AS(inflate_temporal(vid, InflateInit::Identity), InvalidState);
    }
}

TEST_CASE("inflate_temporal: random init statistics") {
    auto img = build_model(small_config(), ConditioningSpec{}, 47);
    auto vid = inflate_temporal(img, InflateInit::Random);
    auto temporal = vid.params.in_group(nn::ParamGroup::Temporal);
    CHECK(!temporal.empty());
    // gates start half-open, temporal convs at the documented random scale
    for (const auto& tb : {vid.tb_down, vid.tb_up})
        for (const auto& b : tb) CHECK(b.gate.raw_alpha->value[0] == 0.5);
    const Tensor& w = vid.tb_down[1].conv.w->value;  // [3, 16, 16] at the lowest level
    double ss = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i) ss += w[i] * w[i];
    const double sd = std::sqrt(ss / double(w.numel()));
    const double want = 1.0 / std::sqrt(3.0 * 16.0);
    CHECK(sd > 0.5 * want);
    CHECK(sd < 1.5 * want);
}

TEST_CASE("temporal equivariance: identity-initialized blocks commute with frame permutation") {
    auto img = build_model(small_config(), ConditioningSpec{}, 53);
    auto vid = inflate_temporal(img, InflateInit::Identity);
    const int64_t T = 4, H = 16, W = 16;
    vid.config.frame_length = T;
    Rng rng(59);
    Tensor z = Tensor::randn({1, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, 1, T, H, W, 13);

    const std::vector<int64_t> perm = {2, 0, 3, 1};
    auto permute_frames = [&](const Tensor& t) {
        Tensor out(t.shape());
        const int64_t frame = t.numel() / T;
        for (int64_t k = 0; k < T; ++k)
            for (int64_t i = 0; i < frame; ++i) out[k * frame + i] = t[perm[size_t(k)] * frame + i];
        return out;
    };
    auto cond_p = cond;
    cond_p.agnostic = permute_frames(cond.agnostic);
    cond_p.person_pose = permute_frames(cond.person_pose);

    nn::NoGradGuard ng;
    Var a = forward(vid, nn::constant(z), {88}, cond, Branch::Video);
    Var b = forward(vid, nn::constant(permute_frames(z)), {88}, cond_p, Branch::Video);
    CHECK(max_abs_diff(permute_frames(a->value), b->value) == 0.0);
}

TEST_CASE("inject_temporal_resampling: shape, probe, function preservation") {
    auto img = build_model(small_config(), ConditioningSpec{}, 61);
    auto vid = inflate_temporal(img, InflateInit::Random);
    const int64_t T = 8, H = 16, W = 16;
    vid.config.frame_length = T;
    Rng rng(67);
    Tensor z = Tensor::randn({1, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, 1, T, H, W, 13);

    nn::NoGradGuard ng;
    Var before = forward(vid, nn::constant(z), {55}, cond, Branch::Video);

    auto res = inject_temporal_resampling(vid);
    CHECK(res.config.temporal_resampling_enabled);
    CHECK(res.params.group_numel(nn::ParamGroup::TemporalResampling) > 0);

    ForwardProbe probe;
    res.probe = &probe;
    Var after = forward(res, nn::constant(z), {55}, cond, Branch::Video);
    res.probe = nullptr;

    SUBCASE("output keeps the input frame count") { CHECK(after->value.shape() == z.shape()); }
    SUBCASE("bottleneck sees the halved clip on the resampled path") {
        CHECK(probe.forward_calls == 1);
        REQUIRE(probe.bottleneck_frame_counts.size() == 2);
        CHECK(probe.bottleneck_frame_counts[0] == T);
        CHECK(probe.bottleneck_frame_counts[1] == T / 2);
    }
    SUBCASE("injection is function-preserving at init") {
        CHECK(max_abs_diff(before->value, after->value) < 1e-4);
    }
    SUBCASE("odd frame counts are rejected while resampling is active") {
        res.config.frame_length = 3;
        Tensor z3 = Tensor::randn({1, 3, H, W, 3}, rng);
        auto cond3 = rand_cond(rng, 1, 3, H, W, 13);
        CHECK_THROWS_AS(forward(res, nn::constant(z3), {55}, cond3, Branch::Video),
                        InvalidArgument);
    }
    SUBCASE("double injection and injection on image models are invalid") {
        CHECK_THROWS_AS(inject_temporal_resampling(res), InvalidState);
        CHECK_THROWS_AS(inject_temporal_resampling(img), InvalidState);
    }
}

TEST_CASE("gradient masking: image branch leaves temporal groups untouched") {
    auto img = build_model(small_config(), ConditioningSpec{}, 71);
    auto vid = inflate_temporal(img, InflateInit::Random);
    auto res = inject_temporal_resampling(vid);
    res.config.frame_length = 4;
    Rng rng(73);
    Tensor z = Tensor::randn({1, 4, 16, 16, 3}, rng);
    auto cond = rand_cond(rng, 1, 4, 16, 16, 13);

    auto grad_norm = [](const std::shared_ptr<nn::Param>& p) {
        if (p->var->grad.numel() == 0) return 0.0;
        double s = 0.0;
        for (int64_t i = 0; i < p->var->grad.numel(); ++i) s += std::abs(p->var->grad[i]);
        return s;
    };

    SUBCASE("image branch: temporal and resampling gradients exactly zero") {
        Var out = forward(res, nn::constant(z), {12}, cond, Branch::Image);
        nn::backward(weighted_sum(out, 999));
        for (auto g : {nn::ParamGroup::Temporal, nn::ParamGroup::TemporalResampling})
            for (const auto& p : res.params.in_group(g)) CHECK(grad_norm(p) == 0.0);
        double spatial = 0.0;
        for (const auto& p : res.params.in_group(nn::ParamGroup::Spatial)) spatial += grad_norm(p);
        CHECK(spatial > 0.0);
    }
    SUBCASE("video branch: gradient reaches temporal and resampling parameters") {
        res.params.zero_grad();
        Var out = forward(res, nn::constant(z), {12}, cond, Branch::Video);
        nn::backward(weighted_sum(out, 999));
        double temporal = 0.0, resamp = 0.0;
        for (const auto& p : res.params.in_group(nn::ParamGroup::Temporal)) temporal += grad_norm(p);
        for (const auto& p : res.params.in_group(nn::ParamGroup::TemporalResampling))
            resamp += grad_norm(p);
        CHECK(temporal > 0.0);
        CHECK(resamp > 0.0);
    }
}

TEST_CASE("finite differences validate the full forward graph") {
    ModelConfig cfg = tiny_config();
    auto m = build_model(cfg, ConditioningSpec{}, 79);
    CHECK(m.params.total_numel() <= 10000);  // keep the check honest and fast
    Rng rng(83);
    const int64_t T = 2, H = 8, W = 8;
    Tensor z = Tensor::randn({1, T, H, W, 3}, rng);
    auto cond = rand_cond(rng, 1, T, H, W, 13);

    auto loss_value = [&]() {
        nn::NoGradGuard ng;
        Var out = forward(m, nn::constant(z), {321}, cond, Branch::Image);
        return weighted_sum(out, 1234)->value[0];
    };
    Var out = forward(m, nn::constant(z), {321}, cond, Branch::Image);
    nn::backward(weighted_sum(out, 1234));

    Rng pick(87);
    const auto& all = m.params.all();
    int checked = 0;
    double worst = 0.0;
    while (checked < 20) {
        const auto& p = all[size_t(pick.uniform_int(0, int64_t(all.size()) - 1))];
        Tensor& v = p->var->value;
        const int64_t i = pick.uniform_int(0, v.numel() - 1);
        const double analytic = p->var->grad.numel() ? p->var->grad[i] : 0.0;
        const double h = 1e-5;
        const double keep = v[i];
        v[i] = keep + h;
        const double fp = loss_value();
        v[i] = keep - h;
        const double fm = loss_value();
        v[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4});
        worst = std::max(worst, rel);
        ++checked;
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("finite differences validate the video branch with resampling") {
    auto img = build_model(tiny_config(), ConditioningSpec{}, 91);
    auto vid = inflate_temporal(img, InflateInit::Random);
    auto m = inject_temporal_resampling(vid);
    m.config.frame_length = 4;
    Rng rng(93);
    Tensor z = Tensor::randn({1, 4, 8, 8, 3}, rng);
    auto cond = rand_cond(rng, 1, 4, 8, 8, 13);

    auto loss_value = [&]() {
        nn::NoGradGuard ng;
        Var out = forward(m, nn::constant(z), {100}, cond, Branch::Video);
        return weighted_sum(out, 555)->value[0];
    };
    Var out = forward(m, nn::constant(z), {100}, cond, Branch::Video);
    nn::backward(weighted_sum(out, 555));

    // focus on the pieces the image branch never exercises
    std::vector<std::shared_ptr<nn::Param>> pool;
    for (auto g : {nn::ParamGroup::Temporal, nn::ParamGroup::TemporalResampling})
        for (const auto& p : m.params.in_group(g)) pool.push_back(p);
    Rng pick(97);
    double worst = 0.0;
    for (int n = 0; n < 12; ++n) {
        const auto& p = pool[size_t(pick.uniform_int(0, int64_t(pool.size()) - 1))];
        Tensor& v = p->var->value;
        const int64_t i = pick.uniform_int(0, v.numel() - 1);
        const double analytic = p->var->grad.numel() ? p->var->grad[i] : 0.0;
        const double h = 1e-5;
        const double keep = v[i];
        v[i] = keep + h;
        const double fp = loss_value();
        v[i] = keep - h;
        const double fm = loss_value();
        v[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic - fd) /
                                    std::max({std::abs(analytic), std::abs(fd), 1e-4}));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("checkpoints round-trip bitwise and validate their inventory") {
    auto img = build_model(small_config(), ConditioningSpec{}, 101);
    auto vid = inflate_temporal(img, InflateInit::Random);
    auto m = inject_temporal_resampling(vid);
    m.config.frame_length = 8;
    // make the values distinctive
    Rng rng(103);
    for (const auto& p : m.params.all())
        for (int64_t i = 0; i < p->var->value.numel(); ++i) p->var->value[i] += 0.01 * rng.normal();

    TempDir tmp("ckpt");
    const std::string dir = tmp.str() + "/step100";
    bool extra_ran = false;
    save_checkpoint(m, dir, "temporal_8",
                    [&](const std::string& tmp_dir) {
                        extra_ran = true;
                        npy::save(tmp_dir + "/opt.npy", Tensor::full({3}, 5.0));
                    });
    CHECK(extra_ran);
    CHECK(std::filesystem::exists(dir + "/opt.npy"));
    CHECK(std::filesystem::exists(dir + "/manifest.json"));
    CHECK(std::filesystem::exists(dir + "/spatial.npy"));
    CHECK(!std::filesystem::exists(dir + ".tmp"));

    auto loaded = load_checkpoint(dir);
    CHECK(loaded.phase == "temporal_8");
    CHECK(loaded.model.config.frame_length == 8);
    CHECK(loaded.model.config.temporal_resampling_enabled);
    CHECK(loaded.model.seed == m.seed);
    REQUIRE(loaded.model.params.all().size() == m.params.all().size());
    for (size_t i = 0; i < m.params.all().size(); ++i)
        CHECK(loaded.model.params.all()[i]->var->value.vec() == m.params.all()[i]->var->value.vec());

    SUBCASE("identical saves hash identically, different params differently") {
        const std::string dir2 = tmp.str() + "/again";
        save_checkpoint(m, dir2, "temporal_8",
                        [&](const std::string& d) { npy::save(d + "/opt.npy", Tensor::full({3}, 5.0)); });
        CHECK(checkpoint_hash(dir) == checkpoint_hash(dir2));
        m.params.all()[0]->var->value[0] += 1.0;
        save_checkpoint(m, tmp.str() + "/third", "temporal_8");
        CHECK(checkpoint_hash(tmp.str() + "/third") != checkpoint_hash(dir));
    }
    SUBCASE("corrupt manifests are rejected") {
        auto manifest = read_json_file(dir + "/manifest.json");
        manifest["groups"][0]["params"][0]["name"] = "bogus";
        write_json_file(dir + "/manifest.json", manifest);
        CHECK_THROWS_AS(load_checkpoint(dir), IoError);
        manifest["format_version"] = "9.9";
        write_json_file(dir + "/manifest.json", manifest);
        CHECK_THROWS_AS(load_checkpoint(dir), IoError);
        CHECK_THROWS_AS(load_checkpoint(tmp.str() + "/missing"), IoError);
    }
    SUBCASE("non-temporal checkpoints round-trip with empty group containers") {
        save_checkpoint(img, tmp.str() + "/img", "image");
        auto li = load_checkpoint(tmp.str() + "/img");
        CHECK(li.model.params.group_numel(nn::ParamGroup::Temporal) == 0);
        CHECK(li.model.params.total_numel() == img.params.total_numel());
    }
}

TEST_CASE("forward probe counts denoiser invocations") {
    auto m = build_model(small_config(), ConditioningSpec{}, 107);
    ForwardProbe probe;
    m.probe = &probe;
    Rng rng(109);
    Tensor z = Tensor::randn({1, 2, 16, 16, 3}, rng);
    auto cond = rand_cond(rng, 1, 2, 16, 16, 13);
    nn::NoGradGuard ng;
    forward(m, nn::constant(z), {5}, cond, Branch::Image);
    forward(m, nn::constant(z), {5}, cond, Branch::Image);
    CHECK(probe.forward_calls == 2);
    CHECK(probe.bottleneck_frame_counts == std::vector<int64_t>{2, 2});
}
