#include "model/model.hpp"

#include <cmath>

#include "core/error.hpp"

namespace vton::model {

using nn::Var;

PredictionTarget prediction_target_from_string(const std::string& s) {
    if (s == "v") return PredictionTarget::V;
    if (s == "epsilon") return PredictionTarget::Epsilon;
    throw InvalidArgument("unknown prediction target: " + s);
}

std::string to_string(PredictionTarget p) {
    return p == PredictionTarget::V ? "v" : "epsilon";
}

int64_t ModelConfig::channels_at(int64_t level) const {
    if (level < 0 || level >= levels()) throw InvalidArgument("resolution level out of range");
    return base_channels * channel_multipliers[size_t(level)];
}

void ModelConfig::validate() const {
    if (base_channels < 1) throw InvalidArgument("base_channels must be positive");
    if (channel_multipliers.empty()) throw InvalidArgument("channel_multipliers must be non-empty");
    for (int64_t m : channel_multipliers)
        if (m < 1) throw InvalidArgument("channel multipliers must be positive");
    if (num_dit_blocks < 1) throw InvalidArgument("num_dit_blocks must be >= 1");
    if (attention_heads < 1) throw InvalidArgument("attention_heads must be positive");
    if (pose_channels < 1) throw InvalidArgument("pose_channels must be positive");
    if (frame_length < 1) throw InvalidArgument("frame_length must be positive");
    const int64_t c_low = channels_at(levels() - 1);
    if (c_low % attention_heads != 0)
        throw InvalidArgument("lowest-resolution channels must divide by attention_heads");
    if (c_low % 2 != 0) throw InvalidArgument("lowest-resolution channels must be even");
    if (temporal_resampling_enabled && !temporal_enabled)
        throw InvalidArgument("temporal resampling requires temporal blocks");
    if (temporal_enabled) {
        if (levels() < 2) throw InvalidArgument("temporal blocks need at least two levels");
        for (int64_t l : {levels() - 2, levels() - 1})
            if (channels_at(l) % attention_heads != 0)
                throw InvalidArgument("temporal attention channels must divide by attention_heads");
    }
}

Var temporal_mix(const Var& z_spatial, const Var& z_temporal, const MixingGate& gate) {
    if (!z_spatial || !z_temporal || !gate.raw_alpha)
        throw InvalidArgument("temporal_mix inputs must be non-null");
    if (!z_spatial->value.same_shape(z_temporal->value))
        throw InvalidArgument("temporal_mix shape mismatch: " +
                              shape_str(z_spatial->value.shape()) + " vs " +
                              shape_str(z_temporal->value.shape()));
    Shape ones(z_spatial->value.ndim(), 1);
    Var a = nn::reshape(gate.alpha(), ones);
    Var b = nn::add_scalar(nn::scale(a, -1.0), 1.0);  // 1 - alpha
    return nn::add(nn::mul(z_spatial, a), nn::mul(z_temporal, b));
}

namespace {

MixingGate make_gate(nn::ParamStore& ps, const std::string& name, nn::ParamGroup g,
                     double raw_init) {
    MixingGate gate;
    gate.raw_alpha = ps.add(name + ".alpha_raw", g, Tensor::full({1}, raw_init));
    return gate;
}

Var conv_block_apply(const ConvBlock& cb, const Var& x) {
    Var h = nn::silu(cb.n1(cb.c1(x)));
    return nn::silu(cb.n2(cb.c2(h)));
}

Var enc_block_apply(const EncBlock& eb, const Var& x) {
    return nn::silu(eb.c2(nn::silu(eb.c1(x))));
}

// Temporal block on folded features [B*T,h,w,C]: temporal conv, then
// attention over the T axis independently per spatial location, blended with
// the untouched per-frame features through the mixing gate.
Var temporal_block_apply(const TemporalBlock& tb, const Var& x4, int64_t B, int64_t T) {
    const Shape& s = x4->value.shape();
    const int64_t h = s[1], w = s[2], C = s[3];
    Var x5 = nn::reshape(x4, {B, T, h, w, C});
    Var z_spatial = x5;
    Var ht = nn::silu(tb.conv(x5));
    Var tok = nn::reshape(nn::permute(ht, {0, 2, 3, 1, 4}), {B * h * w, T, C});
    Var att = tb.attn(tok, tok);
    Var att5 = nn::permute(nn::reshape(att, {B, h, w, T, C}), {0, 3, 1, 2, 4});
    ht = nn::add(ht, att5);
    Var mixed = temporal_mix(z_spatial, ht, tb.gate);
    return nn::reshape(mixed, {B * T, h, w, C});
}

// One DiT block over spatial tokens [N,S,C]: pre-LN self-attention,
// cross-attention to the garment tokens, and an MLP, each modulated by the
// time embedding (scale/shift on the normalized input, gate on the residual
// branch). The modulation head is zero-initialized, so at init every branch
// reduces to a plain active pre-LN block; time dependence is learned.
Var dit_block_apply(const DitBlock& blk, Var x, const Var& gtok, const Var& temb) {
    const int64_t N = x->value.dim(0), C = x->value.dim(2);
    Var mods = blk.ada(nn::silu(temb));  // [N, 9C]
    auto piece = [&](int i) { return nn::reshape(nn::slice_last(mods, i * C, C), {N, 1, C}); };
    auto modulate = [&](const Var& v, int i) {
        return nn::add(nn::mul(v, nn::add_scalar(piece(i), 1.0)), piece(i + 1));
    };
    auto gated = [&](const Var& v, int i) { return nn::mul(v, nn::add_scalar(piece(i), 1.0)); };

    Var a = modulate(nn::layer_norm_last(x), 0);
    x = nn::add(x, gated(blk.self_attn(a, a), 2));
    Var c = modulate(nn::layer_norm_last(x), 3);
    x = nn::add(x, gated(blk.cross_attn(c, gtok), 5));
    Var f = modulate(nn::layer_norm_last(x), 6);
    x = nn::add(x, gated(blk.mlp2(nn::silu(blk.mlp1(f))), 8));
    return x;
}

// Parameter-free temporal pair averaging [B,T,...] -> [B,T/2,...], used to
// carry auxiliary conditioning alongside the learned resampling path.
Var mean_pairs(const Var& x5) {
    const int64_t C = x5->value.dim(4);
    Tensor w = Tensor::zeros({2, C, C});
    for (int64_t c = 0; c < C; ++c) {
        w[(0 * C + c) * C + c] = 0.5;
        w[(1 * C + c) * C + c] = 0.5;
    }
    return nn::conv_temporal(x5, nn::constant(std::move(w)), Var(), 2, 0);
}

void check_cond_shape(const Tensor& t, const Shape& want, const std::string& which) {
    if (t.shape() != want)
        throw InvalidArgument("conditioning input " + which + " has shape " + shape_str(t.shape()) +
                              ", expected " + shape_str(want));
}

void copy_params_by_name(const TryOnDenoiser& src, TryOnDenoiser& dst) {
    for (const auto& p : src.params.all()) {
        auto q = dst.params.find(p->name);
        if (!q) throw InvalidState("parameter missing in extended model: " + p->name);
        if (q->var->value.shape() != p->var->value.shape())
            throw InvalidState("parameter shape changed during extension: " + p->name);
        q->var->value = p->var->value;
    }
}

}  // namespace

TryOnDenoiser build_model(const ModelConfig& config, const ConditioningSpec& spec,
                          uint64_t seed) {
    config.validate();
    if (spec.image_channels < 1 || spec.agnostic_channels < 1 || spec.garment_channels < 1)
        throw InvalidArgument("conditioning channel counts must be positive");
    if (spec.pose_channels != config.pose_channels)
        throw InvalidArgument("conditioning pose channels disagree with model config");

    using nn::ParamGroup;
    TryOnDenoiser m;
    m.config = config;
    m.cond_spec = spec;
    m.seed = seed;
    Rng rng(Rng::hash_combine(seed, 0x6d6f64656c));

    const int64_t L = config.levels();
    const int64_t P = kPoseEmbedChannels;
    const int64_t c_low = config.channels_at(L - 1);
    const double dit_gain = 1.0 / std::sqrt(2.0 * double(config.num_dit_blocks));
    auto& ps = m.params;

    // Registration order below is the serialization layout; keep it stable.
    m.person_pose_embed =
        make_linear(ps, "pose.person", ParamGroup::PoseEmbedders, spec.pose_channels, P, rng);
    m.garment_pose_embed =
        make_linear(ps, "pose.garment", ParamGroup::PoseEmbedders, spec.pose_channels, P, rng);
    m.null_person_pose = ps.add("null.person_pose", ParamGroup::PoseEmbedders,
                                nn::normal_tensor(rng, {spec.pose_channels}, 0.1));
    m.null_garment_pose = ps.add("null.garment_pose", ParamGroup::PoseEmbedders,
                                 nn::normal_tensor(rng, {spec.pose_channels}, 0.1));
    m.null_agnostic = ps.add("null.agnostic", ParamGroup::ConditioningEncoders,
                             nn::normal_tensor(rng, {spec.agnostic_channels}, 0.1));
    m.null_garment = ps.add("null.garment", ParamGroup::ConditioningEncoders,
                            nn::normal_tensor(rng, {spec.garment_channels}, 0.1));

    auto make_enc = [&](const std::string& which, int64_t in0) {
        std::vector<EncBlock> blocks;
        for (int64_t l = 0; l < L; ++l) {
            const int64_t in = (l == 0 ? in0 : config.channels_at(l - 1)) + P;
            const int64_t out = config.channels_at(l);
            EncBlock b;
            const std::string prefix = "enc." + which + "." + std::to_string(l);
            b.c1 = make_conv2d(ps, prefix + ".c1", ParamGroup::ConditioningEncoders, in, out, 3, 1,
                               1, rng);
            b.c2 = make_conv2d(ps, prefix + ".c2", ParamGroup::ConditioningEncoders, out, out, 3,
                               1, 1, rng);
            blocks.push_back(b);
        }
        return blocks;
    };
    m.agnostic_enc = make_enc("agnostic", spec.agnostic_channels);
    m.garment_enc = make_enc("garment", spec.garment_channels);
    m.garment_token_proj =
        make_linear(ps, "enc.garment.tokens", ParamGroup::ConditioningEncoders, c_low, c_low, rng);

    m.time_mlp1 = make_linear(ps, "time.mlp1", ParamGroup::Spatial, c_low, c_low, rng);
    m.time_mlp2 = make_linear(ps, "time.mlp2", ParamGroup::Spatial, c_low, c_low, rng);

    for (int64_t l = 0; l < L; ++l) {
        const int64_t in = (l == 0 ? spec.image_channels : config.channels_at(l - 1)) + P;
        const int64_t out = config.channels_at(l);
        ConvBlock b;
        const std::string prefix = "unet.down." + std::to_string(l);
        b.c1 = make_conv2d(ps, prefix + ".c1", ParamGroup::Spatial, in, out, 3, 1, 1, rng);
        b.n1 = make_group_norm(ps, prefix + ".n1", ParamGroup::Spatial, out);
        b.c2 = make_conv2d(ps, prefix + ".c2", ParamGroup::Spatial, out, out, 3, 1, 1, rng);
        b.n2 = make_group_norm(ps, prefix + ".n2", ParamGroup::Spatial, out);
        m.down_blocks.push_back(b);
    }
    for (int64_t l = 0; l < L; ++l) {
        // the lowest level consumes the DiT output plus its own skip; the
        // others consume the upsampled coarser level plus their skip
        const int64_t in =
            (l == L - 1 ? c_low + c_low : config.channels_at(l + 1) + config.channels_at(l)) + P;
        const int64_t out = config.channels_at(l);
        ConvBlock b;
        const std::string prefix = "unet.up." + std::to_string(l);
        b.c1 = make_conv2d(ps, prefix + ".c1", ParamGroup::Spatial, in, out, 3, 1, 1, rng);
        b.n1 = make_group_norm(ps, prefix + ".n1", ParamGroup::Spatial, out);
        b.c2 = make_conv2d(ps, prefix + ".c2", ParamGroup::Spatial, out, out, 3, 1, 1, rng);
        b.n2 = make_group_norm(ps, prefix + ".n2", ParamGroup::Spatial, out);
        m.up_blocks.push_back(b);
    }
    m.head = make_conv2d(ps, "unet.head", ParamGroup::Spatial, config.channels_at(0),
                         spec.image_channels, 3, 1, 1, rng);

    m.dit_entry = make_linear(ps, "dit.entry", ParamGroup::Dit, c_low + c_low, c_low, rng);
    for (int64_t i = 0; i < config.num_dit_blocks; ++i) {
        DitBlock b;
        const std::string prefix = "dit." + std::to_string(i);
        b.self_attn = make_attention(ps, prefix + ".self", ParamGroup::Dit, c_low,
                                     config.attention_heads, rng, dit_gain);
        b.cross_attn = make_attention(ps, prefix + ".cross", ParamGroup::Dit, c_low,
                                      config.attention_heads, rng, dit_gain);
        b.mlp1 = make_linear(ps, prefix + ".mlp1", ParamGroup::Dit, c_low, 4 * c_low, rng);
        b.mlp2 = make_linear(ps, prefix + ".mlp2", ParamGroup::Dit, 4 * c_low, c_low, rng,
                             dit_gain);
        b.ada = make_linear(ps, prefix + ".ada", ParamGroup::Dit, c_low, 9 * c_low, rng, 0.0);
        m.dit_blocks.push_back(b);
    }

    if (config.temporal_enabled) {
        auto make_tb = [&](const std::string& side, int idx, int64_t level) {
            const int64_t C = config.channels_at(level);
            const std::string prefix = "temporal." + side + "." + std::to_string(idx);
            TemporalBlock tb;
            tb.conv = make_conv_temporal(ps, prefix + ".conv", ParamGroup::Temporal, C, C, 3, 1, 1,
                                         nn::TemporalInit::Random, rng);
            tb.attn = make_attention(ps, prefix + ".attn", ParamGroup::Temporal, C,
                                     config.attention_heads, rng, 0.5);
            tb.gate = make_gate(ps, prefix + ".gate", ParamGroup::Temporal, 0.5);
            return tb;
        };
        m.tb_down.push_back(make_tb("down", 0, L - 2));
        m.tb_down.push_back(make_tb("down", 1, L - 1));
        m.tb_up.push_back(make_tb("up", 0, L - 2));
        m.tb_up.push_back(make_tb("up", 1, L - 1));
    }

    if (config.temporal_resampling_enabled) {
        const int64_t c_in = config.channels_at(L - 2);
        m.res_down = make_conv_temporal(ps, "resample.down", ParamGroup::TemporalResampling, c_in,
                                        c_in, 2, 2, 0, nn::TemporalInit::Mean, rng);
        m.res_up = make_conv_temporal(ps, "resample.up", ParamGroup::TemporalResampling, c_low,
                                      c_low, 3, 1, 1, nn::TemporalInit::Identity, rng);
        m.res_gate = make_gate(ps, "resample.gate", ParamGroup::TemporalResampling, 1.0);
    }
    return m;
}

Var forward(const TryOnDenoiser& m, const Var& z_t, const std::vector<int64_t>& t,
            const data::TryOnConditioning& cond, Branch branch) {
    const ModelConfig& cfg = m.config;
    const ConditioningSpec& cs = m.cond_spec;
    if (!z_t || z_t->value.ndim() != 5)
        throw InvalidArgument("denoiser input must be [B,T,H,W,C]");
    const int64_t B = z_t->value.dim(0), T = z_t->value.dim(1), H = z_t->value.dim(2),
                  W = z_t->value.dim(3), Ci = z_t->value.dim(4);
    if (Ci != cs.image_channels)
        throw InvalidArgument("denoiser input has " + std::to_string(Ci) + " channels, expected " +
                              std::to_string(cs.image_channels));
    const int64_t L = cfg.levels();
    const int64_t down_factor = int64_t(1) << (L - 1);
    if (H % down_factor != 0 || W % down_factor != 0)
        throw InvalidArgument("spatial dims must be divisible by " + std::to_string(down_factor));
    if (static_cast<int64_t>(t.size()) != B)
        throw InvalidArgument("timestep batch size mismatch");
    for (int64_t ti : t)
        if (ti < 0) throw InvalidArgument("timesteps must be non-negative");

    if (branch == Branch::Video && !cfg.temporal_enabled)
        throw InvalidState("video branch requires a temporal-enabled model");
    if (branch == Branch::Video && T != cfg.frame_length)
        throw InvalidArgument("video branch expects T == frame_length (" +
                              std::to_string(cfg.frame_length) + "), got " + std::to_string(T));
    const bool temporal_active = branch == Branch::Video;
    const bool resample_active = temporal_active && cfg.temporal_resampling_enabled;
    if (resample_active && T % 2 != 0)
        throw InvalidArgument("temporal resampling requires an even frame count");

    if (m.probe) ++m.probe->forward_calls;

    // Conditioning inputs: dropped inputs are replaced by learned null
    // embeddings broadcast to the input shape; their tensors are ignored.
    Var ia, sg, jp, jg;
    if (cond.null_agnostic) {
        ia = nn::expand_channel_vector(m.null_agnostic, {B, T, H, W, cs.agnostic_channels});
    } else {
        check_cond_shape(cond.agnostic, {B, T, H, W, cs.agnostic_channels}, "agnostic");
        ia = nn::constant(cond.agnostic);
    }
    if (cond.null_garment) {
        sg = nn::expand_channel_vector(m.null_garment, {B, H, W, cs.garment_channels});
    } else {
        check_cond_shape(cond.garment, {B, H, W, cs.garment_channels}, "garment");
        sg = nn::constant(cond.garment);
    }
    if (cond.null_person_pose) {
        jp = nn::expand_channel_vector(m.null_person_pose, {B, T, H, W, cs.pose_channels});
    } else {
        check_cond_shape(cond.person_pose, {B, T, H, W, cs.pose_channels}, "person_pose");
        jp = nn::constant(cond.person_pose);
    }
    if (cond.null_garment_pose) {
        jg = nn::expand_channel_vector(m.null_garment_pose, {B, H, W, cs.pose_channels});
    } else {
        check_cond_shape(cond.garment_pose, {B, H, W, cs.pose_channels}, "garment_pose");
        jg = nn::constant(cond.garment_pose);
    }

    const int64_t P = kPoseEmbedChannels;
    const int64_t c_low = cfg.channels_at(L - 1);
    const int64_t hl = H / down_factor, wl = W / down_factor;

    // Pose embeddings, pooled into a pyramid so they can be concatenated into
    // every spatial layer at its own resolution.
    std::vector<Var> pp(L), gp(L);
    pp[0] = nn::reshape(m.person_pose_embed(jp), {B * T, H, W, P});
    gp[0] = m.garment_pose_embed(jg);  // [B,H,W,P]
    for (int64_t l = 1; l < L; ++l) {
        pp[l] = nn::avgpool2d_2x(pp[l - 1]);
        gp[l] = nn::avgpool2d_2x(gp[l - 1]);
    }

    // Garment encoder -> tokens for cross-attention.
    Var g = sg;
    for (int64_t l = 0; l < L; ++l) {
        g = enc_block_apply(m.garment_enc[size_t(l)], nn::concat_last({g, gp[l]}));
        if (l < L - 1) g = nn::avgpool2d_2x(g);
    }
    Var gtok_b = m.garment_token_proj(nn::reshape(g, {B, hl * wl, c_low}));

    // Agnostic encoder -> spatially aligned features at the bottleneck.
    Var a = nn::reshape(ia, {B * T, H, W, cs.agnostic_channels});
    for (int64_t l = 0; l < L; ++l) {
        a = enc_block_apply(m.agnostic_enc[size_t(l)], nn::concat_last({a, pp[l]}));
        if (l < L - 1) a = nn::avgpool2d_2x(a);
    }

    auto build_temb = [&](int64_t frames) {
        std::vector<double> tf(size_t(B * frames));
        for (int64_t b = 0; b < B; ++b)
            for (int64_t k = 0; k < frames; ++k) tf[size_t(b * frames + k)] = double(t[size_t(b)]);
        Var e = nn::constant(nn::timestep_features(tf, c_low));
        return m.time_mlp2(nn::silu(m.time_mlp1(e)));
    };

    // Main encoder down to (but excluding) the lowest level.
    Var x = nn::reshape(z_t, {B * T, H, W, Ci});
    std::vector<Var> skips(L);
    for (int64_t l = 0; l + 1 < L; ++l) {
        x = conv_block_apply(m.down_blocks[size_t(l)], nn::concat_last({x, pp[l]}));
        if (temporal_active && l == L - 2) x = temporal_block_apply(m.tb_down[0], x, B, T);
        skips[l] = x;
        x = nn::avgpool2d_2x(x);
    }

    // Bottleneck stage: lowest-level conv blocks, DiT fusion stack, lowest
    // up block. Runs at full length and (with resampling) again at T/2.
    auto stage = [&](const Var& xin, const Var& pose_low, const Var& ag_low, const Var& temb,
                     int64_t frames) {
        if (m.probe) m.probe->bottleneck_frame_counts.push_back(frames);
        Var s = conv_block_apply(m.down_blocks[size_t(L - 1)], nn::concat_last({xin, pose_low}));
        if (temporal_active) s = temporal_block_apply(m.tb_down[1], s, B, frames);
        Var skip_low = s;
        Var d = m.dit_entry(nn::concat_last({s, ag_low}));
        Var dtok = nn::reshape(d, {B * frames, hl * wl, c_low});
        Var gtok = nn::repeat_batch(gtok_b, frames);
        for (const DitBlock& blk : m.dit_blocks) dtok = dit_block_apply(blk, dtok, gtok, temb);
        Var u = nn::reshape(dtok, {B * frames, hl, wl, c_low});
        u = conv_block_apply(m.up_blocks[size_t(L - 1)], nn::concat_last({u, skip_low, pose_low}));
        if (temporal_active) u = temporal_block_apply(m.tb_up[1], u, B, frames);
        return u;  // [B*frames, hl, wl, c_low]
    };

    const int64_t c_stage_in = x->value.dim(3);
    Var y;
    if (resample_active) {
        Var y_full = stage(x, pp[L - 1], a, build_temb(T), T);
        // resampled path: learned pair-downsampling of the features, with the
        // auxiliary conditioning averaged alongside
        Var xh = m.res_down(nn::reshape(x, {B, T, hl, wl, c_stage_in}));
        Var pose_h = mean_pairs(nn::reshape(pp[L - 1], {B, T, hl, wl, P}));
        Var ag_h = mean_pairs(nn::reshape(a, {B, T, hl, wl, c_low}));
        Var yh = stage(nn::reshape(xh, {B * (T / 2), hl, wl, c_stage_in}),
                       nn::reshape(pose_h, {B * (T / 2), hl, wl, P}),
                       nn::reshape(ag_h, {B * (T / 2), hl, wl, c_low}), build_temb(T / 2), T / 2);
        Var yh5 = m.res_up(nn::repeat_temporal2(nn::reshape(yh, {B, T / 2, hl, wl, c_low})));
        Var alpha = nn::reshape(m.res_gate.alpha(), {1, 1, 1, 1});
        Var beta = nn::add_scalar(nn::scale(alpha, -1.0), 1.0);
        y = nn::add(nn::mul(y_full, alpha),
                    nn::mul(nn::reshape(yh5, {B * T, hl, wl, c_low}), beta));
    } else {
        y = stage(x, pp[L - 1], a, build_temb(T), T);
    }

    // Decoder back up through the remaining levels.
    for (int64_t l = L - 2; l >= 0; --l) {
        y = nn::upsample_nearest2d_2x(y);
        y = conv_block_apply(m.up_blocks[size_t(l)], nn::concat_last({y, skips[l], pp[l]}));
        if (temporal_active && l == L - 2) y = temporal_block_apply(m.tb_up[0], y, B, T);
    }
    return nn::reshape(m.head(y), {B, T, H, W, Ci});
}

TryOnDenoiser inflate_temporal(const TryOnDenoiser& image_model, InflateInit init) {
    if (image_model.config.temporal_enabled)
        throw InvalidState("model already has temporal blocks");
    ModelConfig cfg = image_model.config;
    cfg.temporal_enabled = true;
    TryOnDenoiser out = build_model(cfg, image_model.cond_spec, image_model.seed);
    copy_params_by_name(image_model, out);
    if (init == InflateInit::Identity) {
        // gates fully open toward the per-frame path and pass-through convs:
        // the inflated model computes exactly what the image model does
        auto make_identity = [](TemporalBlock& tb) {
            Tensor& w = tb.conv.w->value;
            const int64_t k = w.dim(0), C = w.dim(1);
            w.fill(0.0);
            for (int64_t c = 0; c < C; ++c) w[((k / 2) * C + c) * C + c] = 1.0;
            tb.conv.b->value.fill(0.0);
            tb.gate.raw_alpha->value.fill(1.0);
        };
        for (auto& tb : out.tb_down) make_identity(tb);
        for (auto& tb : out.tb_up) make_identity(tb);
    }
    return out;
}

TryOnDenoiser inject_temporal_resampling(const TryOnDenoiser& m) {
    if (!m.config.temporal_enabled)
        throw InvalidState("temporal resampling requires a temporal model");
    if (m.config.temporal_resampling_enabled)
        throw InvalidState("temporal resampling already present");
    ModelConfig cfg = m.config;
    cfg.temporal_resampling_enabled = true;
    TryOnDenoiser out = build_model(cfg, m.cond_spec, m.seed);
    copy_params_by_name(m, out);
    // the fresh resampling parameters are already function-preserving:
    // mean-init down conv, identity up conv, gate fully on the full-length path
    return out;
}

}  // namespace vton::model
