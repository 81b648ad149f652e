#include "nn/layers.hpp"

#include <array>
#include <cmath>

#include "core/error.hpp"

namespace vton::nn {

const std::array<ParamGroup, kNumParamGroups> kAllParamGroups = {
    ParamGroup::Spatial,           ParamGroup::Temporal,      ParamGroup::TemporalResampling,
    ParamGroup::ConditioningEncoders, ParamGroup::PoseEmbedders, ParamGroup::Dit,
};

std::string group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Spatial: return "spatial";
        case ParamGroup::Temporal: return "temporal";
        case ParamGroup::TemporalResampling: return "temporal_resampling";
        case ParamGroup::ConditioningEncoders: return "conditioning_encoders";
        case ParamGroup::PoseEmbedders: return "pose_embedders";
        case ParamGroup::Dit: return "dit";
    }
    throw InvalidArgument("unknown param group");
}

ParamGroup group_from_name(const std::string& name) {
    for (ParamGroup g : kAllParamGroups)
        if (group_name(g) == name) return g;
    throw InvalidArgument("unknown param group name: " + name);
}

Var ParamStore::add(const std::string& name, ParamGroup group, Tensor init) {
    if (index_.count(name)) throw InvalidState("duplicate parameter name: " + name);
    auto p = std::make_shared<Param>();
    p->name = name;
    p->group = group;
    p->var = leaf(std::move(init), true);
    index_[name] = params_.size();
    params_.push_back(p);
    return p->var;
}

std::shared_ptr<Param> ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
}

std::vector<std::shared_ptr<Param>> ParamStore::in_group(ParamGroup g) const {
    std::vector<std::shared_ptr<Param>> out;
    for (const auto& p : params_)
        if (p->group == g) out.push_back(p);
    return out;
}

int64_t ParamStore::group_numel(ParamGroup g) const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (p->group == g) n += p->var->value.numel();
    return n;
}

int64_t ParamStore::total_numel() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->var->value.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (const auto& p : params_) {
        if (p->var->grad.numel() > 0) p->var->grad.fill(0.0);
    }
}

Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * stddev;
    return t;
}

Linear make_linear(ParamStore& ps, const std::string& prefix, ParamGroup g, int64_t in,
                   int64_t out, Rng& rng, double gain, bool bias) {
    if (in < 1 || out < 1) throw InvalidArgument("linear dims must be positive: " + prefix);
    const double stddev = gain / std::sqrt(static_cast<double>(in));
    Linear l;
    l.w = ps.add(prefix + ".w", g, gain == 0.0 ? Tensor::zeros({in, out})
                                               : normal_tensor(rng, {in, out}, stddev));
    if (bias) l.b = ps.add(prefix + ".b", g, Tensor::zeros({out}));
    return l;
}

Conv2d make_conv2d(ParamStore& ps, const std::string& prefix, ParamGroup g, int64_t in,
                   int64_t out, int k, int stride, int pad, Rng& rng, double gain) {
    if (in < 1 || out < 1 || k < 1) throw InvalidArgument("conv dims must be positive: " + prefix);
    const double fan_in = static_cast<double>(k) * k * static_cast<double>(in);
    const double stddev = gain / std::sqrt(fan_in);
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    c.w = ps.add(prefix + ".w", g, gain == 0.0 ? Tensor::zeros({k, k, in, out})
                                               : normal_tensor(rng, {k, k, in, out}, stddev));
    c.b = ps.add(prefix + ".b", g, Tensor::zeros({out}));
    return c;
}

ConvTemporal make_conv_temporal(ParamStore& ps, const std::string& prefix, ParamGroup g,
                                int64_t in, int64_t out, int k, int stride, int pad,
                                TemporalInit init, Rng& rng) {
    if (in < 1 || out < 1 || k < 1)
        throw InvalidArgument("temporal conv dims must be positive: " + prefix);
    Tensor w = Tensor::zeros({k, in, out});
    switch (init) {
        case TemporalInit::Identity: {
            if (in != out || k % 2 == 0)
                throw InvalidArgument("identity temporal init needs in==out and odd kernel: " + prefix);
            const int64_t mid = k / 2;
            for (int64_t c = 0; c < in; ++c) w.data()[(mid * in + c) * out + c] = 1.0;
            break;
        }
        case TemporalInit::Mean: {
            if (in != out) throw InvalidArgument("mean temporal init needs in==out: " + prefix);
            const double v = 1.0 / static_cast<double>(k);
            for (int64_t tap = 0; tap < k; ++tap)
                for (int64_t c = 0; c < in; ++c) w.data()[(tap * in + c) * out + c] = v;
            break;
        }
        case TemporalInit::Zero:
            break;
        case TemporalInit::Random: {
            const double stddev = 1.0 / std::sqrt(static_cast<double>(k * in));
            w = normal_tensor(rng, {k, in, out}, stddev);
            break;
        }
    }
    ConvTemporal c;
    c.stride = stride;
    c.pad = pad;
    c.w = ps.add(prefix + ".w", g, std::move(w));
    c.b = ps.add(prefix + ".b", g, Tensor::zeros({out}));
    return c;
}

int64_t gn_groups(int64_t channels) {
    for (int64_t g : {8, 4, 2})
        if (channels % g == 0) return g;
    return 1;
}

GroupNormLayer make_group_norm(ParamStore& ps, const std::string& prefix, ParamGroup g,
                               int64_t channels) {
    GroupNormLayer n;
    n.groups = gn_groups(channels);
    n.gamma = ps.add(prefix + ".gamma", g, Tensor::full({channels}, 1.0));
    n.beta = ps.add(prefix + ".beta", g, Tensor::zeros({channels}));
    return n;
}

Var Attention::operator()(const Var& xq, const Var& xkv) const {
    const Shape& qs = xq->value.shape();
    const Shape& ks = xkv->value.shape();
    if (qs.size() != 3 || ks.size() != 3)
        throw InvalidArgument("attention expects token tensors [N,S,C]");
    if (qs[0] != ks[0]) throw InvalidArgument("attention batch mismatch");
    const int64_t N = qs[0], Sq = qs[1], C = qs[2], Sk = ks[1];
    if (C % heads != 0) throw InvalidArgument("attention channels not divisible by heads");
    const int64_t dh = C / heads;

    auto split_heads = [&](const Var& t, int64_t S) {
        // [N,S,C] -> [N*heads, S, dh]
        Var r = reshape(t, {N, S, heads, dh});
        r = permute(r, {0, 2, 1, 3});
        return reshape(r, {N * heads, S, dh});
    };
    Var qh = split_heads(q(xq), Sq);
    Var kh = split_heads(k(xkv), Sk);
    Var vh = split_heads(v(xkv), Sk);

    Var scores = bmm(qh, permute(kh, {0, 2, 1}));
    scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
    Var att = softmax_last(scores);
    Var out = bmm(att, vh);  // [N*heads, Sq, dh]
    out = reshape(out, {N, heads, Sq, dh});
    out = permute(out, {0, 2, 1, 3});
    out = reshape(out, {N, Sq, C});
    return o(out);
}

Attention make_attention(ParamStore& ps, const std::string& prefix, ParamGroup g,
                         int64_t channels, int64_t heads, Rng& rng, double out_gain) {
    if (heads < 1 || channels % heads != 0)
        throw InvalidArgument("attention channels must divide by heads: " + prefix);
    Attention a;
    a.heads = heads;
    a.q = make_linear(ps, prefix + ".q", g, channels, channels, rng, 1.0, false);
    a.k = make_linear(ps, prefix + ".k", g, channels, channels, rng, 1.0, false);
    a.v = make_linear(ps, prefix + ".v", g, channels, channels, rng, 1.0, false);
    a.o = make_linear(ps, prefix + ".o", g, channels, channels, rng, out_gain, true);
    return a;
}

Tensor timestep_features(const std::vector<double>& t, int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw InvalidArgument("timestep feature dim must be even, >= 2");
    const int64_t half = dim / 2;
    const int64_t n = static_cast<int64_t>(t.size());
    Tensor out({n, dim});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < half; ++j) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
            const double ang = t[static_cast<size_t>(i)] * freq;
            out.data()[i * dim + j] = std::sin(ang);
            out.data()[i * dim + half + j] = std::cos(ang);
        }
    }
    return out;
}

}  // namespace vton::nn
