#pragma once

#include <array>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/rng.hpp"
#include "nn/autodiff.hpp"

namespace vton::nn {

// Parameter groups used for selective updates (image batches skip the
// temporal groups) and for per-group checkpoint containers.
enum class ParamGroup {
    Spatial,
    Temporal,
    TemporalResampling,
    ConditioningEncoders,
    PoseEmbedders,
    Dit,
};
inline constexpr int kNumParamGroups = 6;
extern const std::array<ParamGroup, kNumParamGroups> kAllParamGroups;

std::string group_name(ParamGroup g);
ParamGroup group_from_name(const std::string& name);

struct Param {
    std::string name;
    ParamGroup group;
    Var var;  // leaf with requires_grad
};

// Owns every parameter of one model, in a stable registration order that
// defines the serialization layout.
class ParamStore {
  public:
    Var add(const std::string& name, ParamGroup group, Tensor init);
    const std::vector<std::shared_ptr<Param>>& all() const { return params_; }
    std::shared_ptr<Param> find(const std::string& name) const;
    std::vector<std::shared_ptr<Param>> in_group(ParamGroup g) const;
    int64_t group_numel(ParamGroup g) const;
    int64_t total_numel() const;
    void zero_grad();

  private:
    std::vector<std::shared_ptr<Param>> params_;
    std::unordered_map<std::string, size_t> index_;
};

Tensor normal_tensor(Rng& rng, Shape shape, double stddev);

struct Linear {
    Var w, b;  // b empty => no bias
    Var operator()(const Var& x) const { return linear(x, w, b); }
};
Linear make_linear(ParamStore& ps, const std::string& prefix, ParamGroup g, int64_t in,
                   int64_t out, Rng& rng, double gain = 1.0, bool bias = true);

struct Conv2d {
    Var w, b;
    int stride = 1;
    int pad = 1;
    Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};
Conv2d make_conv2d(ParamStore& ps, const std::string& prefix, ParamGroup g, int64_t in,
                   int64_t out, int k, int stride, int pad, Rng& rng, double gain = 1.0);

enum class TemporalInit {
    Identity,  // center tap = identity map (requires in == out, odd k)
    Mean,      // every tap = I/k: temporal averaging (requires in == out)
    Zero,
    Random,
};

struct ConvTemporal {
    Var w, b;
    int stride = 1;
    int pad = 1;
    Var operator()(const Var& x) const { return conv_temporal(x, w, b, stride, pad); }
};
ConvTemporal make_conv_temporal(ParamStore& ps, const std::string& prefix, ParamGroup g,
                                int64_t in, int64_t out, int k, int stride, int pad,
                                TemporalInit init, Rng& rng);

struct GroupNormLayer {
    Var gamma, beta;
    int64_t groups = 1;
    Var operator()(const Var& x) const { return group_norm(x, groups, gamma, beta); }
};
GroupNormLayer make_group_norm(ParamStore& ps, const std::string& prefix, ParamGroup g,
                               int64_t channels);
// Largest of {8,4,2,1} dividing `channels`.
int64_t gn_groups(int64_t channels);

// Multi-head attention. Self-attention when xq == xkv; cross-attention
// otherwise. Inputs are token tensors [N, S, C].
struct Attention {
    Linear q, k, v, o;
    int64_t heads = 1;
    Var operator()(const Var& xq, const Var& xkv) const;
};
Attention make_attention(ParamStore& ps, const std::string& prefix, ParamGroup g,
                         int64_t channels, int64_t heads, Rng& rng, double out_gain = 1.0);

// Sinusoidal features for a batch of timesteps, [len(t), dim], dim even.
Tensor timestep_features(const std::vector<double>& t, int64_t dim);

}  // namespace vton::nn
