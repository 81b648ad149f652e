#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "core/rng.hpp"
#include "nn/autodiff.hpp"
#include "nn/layers.hpp"

using namespace vton;
using namespace vton::nn;

namespace {

Tensor rand_tensor(Shape s, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t = Tensor::randn(std::move(s), rng);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] *= scale;
    return t;
}

// Reduces an arbitrary output to a scalar with fixed random weights so every
// output element influences the loss with a distinct coefficient.
Var weighted_sum(const Var& out, uint64_t seed = 777) {
    Var w = constant(rand_tensor(out->value.shape(), seed));
    return reduce_sum_all(mul(out, w));
}

// Central finite differences against analytic gradients for every element of
// every leaf. `forward` must rebuild the graph from the leaves' current
// values. Returns the max relative error.
double fd_max_rel_err(const std::vector<Var>& leaves, const std::function<Var()>& forward,
                      double h = 1e-5) {
    for (const auto& l : leaves) l->grad = Tensor();  // drop accumulation from earlier backwards
    Var loss = forward();
    backward(loss);
    std::vector<Tensor> analytic;
    for (const auto& l : leaves) {
        REQUIRE(l->grad.numel() == l->value.numel());
        analytic.push_back(l->grad);
    }
    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& v = leaves[li]->value;
        for (int64_t i = 0; i < v.numel(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double fp = forward()->value[0];
            v[i] = orig - h;
            const double fm = forward()->value[0];
            v[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double ga = analytic[li][i];
            const double err = std::abs(ga - fd) / std::max({std::abs(fd), std::abs(ga), 1e-4});
            worst = std::max(worst, err);
        }
        leaves[li]->grad = Tensor();  // reset for any reuse
    }
    return worst;
}

constexpr double kFdTol = 1e-3;  // pinned analytic-vs-FD tolerance

}  // namespace

TEST_CASE("binary elementwise ops: values and gradients") {
    Var a = leaf(rand_tensor({2, 3, 4}, 1));
    Var b = leaf(rand_tensor({2, 3, 4}, 2));
    SUBCASE("add") {
        CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(add(a, b)); }) < kFdTol);
    }
    SUBCASE("sub") {
        CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(sub(a, b)); }) < kFdTol);
    }
    SUBCASE("mul") {
        CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(mul(a, b)); }) < kFdTol);
        Var c = mul(a, b);
        for (int64_t i = 0; i < c->value.numel(); ++i)
            CHECK(c->value[i] == doctest::Approx(a->value[i] * b->value[i]));
    }
}

TEST_CASE("broadcast against size-1 dims sums gradients correctly") {
    Var a = leaf(rand_tensor({2, 3, 4, 5}, 3));
    Var b = leaf(rand_tensor({2, 1, 1, 5}, 4));
    CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(add(a, b)); }) < kFdTol);
    CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(mul(a, b)); }) < kFdTol);
    CHECK_THROWS_AS(add(a, leaf(rand_tensor({2, 3, 4, 2}, 5))), InvalidArgument);
    CHECK_THROWS_AS(add(a, leaf(rand_tensor({2, 3, 4}, 5))), InvalidArgument);
}

TEST_CASE("scalar ops, silu") {
    Var a = leaf(rand_tensor({3, 7}, 6));
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(scale(a, -1.7)); }) < kFdTol);
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(add_scalar(a, 0.3)); }) < kFdTol);
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(silu(a)); }) < kFdTol);
}

TEST_CASE("clamp01 value, interior gradient, boundary subgradient") {
    Var a = leaf(Tensor({5}, {-0.5, 0.0, 0.4, 1.0, 1.5}));
    Var y = clamp01(a);
    CHECK(y->value[0] == 0.0);
    CHECK(y->value[1] == 0.0);
    CHECK(y->value[2] == doctest::Approx(0.4));
    CHECK(y->value[3] == 1.0);
    CHECK(y->value[4] == 1.0);
    backward(reduce_sum_all(y));
    // pass-through on the closed interval (gates parked at 0 or 1 can move),
    // zero outside
    CHECK(a->grad[0] == 0.0);
    CHECK(a->grad[1] == 1.0);
    CHECK(a->grad[2] == 1.0);
    CHECK(a->grad[3] == 1.0);
    CHECK(a->grad[4] == 0.0);

    Var interior = leaf(Tensor({3}, {0.2, 0.5, 0.8}));
    CHECK(fd_max_rel_err({interior}, [&] { return weighted_sum(clamp01(interior)); }) < kFdTol);
}

TEST_CASE("reductions") {
    Var a = leaf(rand_tensor({4, 5}, 8));
    Var m = reduce_mean_all(a);
    double expect = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) expect += a->value[i];
    expect /= 20.0;
    CHECK(m->value[0] == doctest::Approx(expect));
    CHECK(fd_max_rel_err({a}, [&] { return reduce_mean_all(mul(a, a)); }) < kFdTol);
    CHECK(fd_max_rel_err({a}, [&] { return reduce_sum_all(mul(a, a)); }) < kFdTol);
}

TEST_CASE("reshape and permute round-trip with gradients") {
    Var a = leaf(rand_tensor({2, 3, 4}, 9));
    SUBCASE("reshape preserves data") {
        Var r = reshape(a, {4, 6});
        CHECK(r->value.shape() == Shape{4, 6});
        CHECK(r->value[5] == a->value[5]);
        CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(reshape(a, {6, 4})); }) < kFdTol);
    }
    SUBCASE("permute moves axes") {
        Var p = permute(a, {2, 0, 1});
        CHECK(p->value.shape() == Shape{4, 2, 3});
        // out[i,j,k] = in[j,k,i]
        CHECK(p->value[(1 * 2 + 0) * 3 + 2] == a->value[(0 * 3 + 2) * 4 + 1]);
        CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(permute(a, {2, 0, 1})); }) < kFdTol);
    }
    SUBCASE("permute of permute restores") {
        Var p = permute(permute(a, {1, 2, 0}), {2, 0, 1});
        for (int64_t i = 0; i < a->value.numel(); ++i) CHECK(p->value[i] == a->value[i]);
    }
}

TEST_CASE("concat_last and slice_last invert each other") {
    Var a = leaf(rand_tensor({2, 3, 2}, 10));
    Var b = leaf(rand_tensor({2, 3, 5}, 11));
    Var c = concat_last({a, b});
    CHECK(c->value.shape() == Shape{2, 3, 7});
    Var sa = slice_last(c, 0, 2);
    Var sb = slice_last(c, 2, 5);
    for (int64_t i = 0; i < a->value.numel(); ++i) CHECK(sa->value[i] == a->value[i]);
    for (int64_t i = 0; i < b->value.numel(); ++i) CHECK(sb->value[i] == b->value[i]);
    CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(concat_last({a, b})); }) < kFdTol);
    CHECK(fd_max_rel_err({a, b}, [&] {
              return weighted_sum(slice_last(concat_last({a, b}), 1, 4));
          }) < kFdTol);
    CHECK_THROWS_AS(slice_last(a, 1, 5), InvalidArgument);
}

TEST_CASE("repeat_batch and repeat_temporal2") {
    Var a = leaf(rand_tensor({2, 3, 2}, 12));
    Var r = repeat_batch(a, 3);
    CHECK(r->value.shape() == Shape{6, 3, 2});
    // rows repeat consecutively: out blocks 0..2 copy a[0], blocks 3..5 copy a[1]
    for (int64_t i = 0; i < 6; ++i) {
        CHECK(r->value[2 * 6 + i] == a->value[0 * 6 + i]);
        CHECK(r->value[3 * 6 + i] == a->value[1 * 6 + i]);
    }
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(repeat_batch(a, 4)); }) < kFdTol);

    Var v = leaf(rand_tensor({1, 3, 2, 2, 2}, 13));
    Var t2 = repeat_temporal2(v);
    CHECK(t2->value.shape() == Shape{1, 6, 2, 2, 2});
    for (int64_t i = 0; i < 8; ++i) {
        CHECK(t2->value[2 * 8 + i] == v->value[1 * 8 + i]);
        CHECK(t2->value[3 * 8 + i] == v->value[1 * 8 + i]);
    }
    CHECK(fd_max_rel_err({v}, [&] { return weighted_sum(repeat_temporal2(v)); }) < kFdTol);
}

TEST_CASE("expand_channel_vector broadcasts and sums gradient") {
    Var v = leaf(rand_tensor({4}, 14));
    Var e = expand_channel_vector(v, {2, 3, 4});
    CHECK(e->value.shape() == Shape{2, 3, 4});
    CHECK(e->value[1 * 4 + 2] == v->value[2]);
    CHECK(fd_max_rel_err({v}, [&] { return weighted_sum(expand_channel_vector(v, {2, 3, 4})); }) <
          kFdTol);
}

TEST_CASE("matmul, bmm, linear against finite differences") {
    Var a = leaf(rand_tensor({3, 4}, 15));
    Var b = leaf(rand_tensor({4, 5}, 16));
    CHECK(fd_max_rel_err({a, b}, [&] { return weighted_sum(matmul(a, b)); }) < kFdTol);

    Var ba = leaf(rand_tensor({2, 3, 4}, 17));
    Var bb = leaf(rand_tensor({2, 4, 2}, 18));
    CHECK(fd_max_rel_err({ba, bb}, [&] { return weighted_sum(bmm(ba, bb)); }) < kFdTol);

    Var x = leaf(rand_tensor({2, 3, 4}, 19));
    Var w = leaf(rand_tensor({4, 6}, 20));
    Var bias = leaf(rand_tensor({6}, 21));
    CHECK(fd_max_rel_err({x, w, bias}, [&] { return weighted_sum(linear(x, w, bias)); }) < kFdTol);
    CHECK(linear(x, w, bias)->value.shape() == Shape{2, 3, 6});
    CHECK(fd_max_rel_err({x, w}, [&] { return weighted_sum(linear(x, w, Var())); }) < kFdTol);
}

TEST_CASE("conv2d matches a naive direct convolution and its gradients") {
    Var x = leaf(rand_tensor({2, 5, 4, 3}, 22));
    Var w = leaf(rand_tensor({3, 3, 3, 2}, 23));
    Var b = leaf(rand_tensor({2}, 24));
    Var y = conv2d(x, w, b, 1, 1);
    REQUIRE(y->value.shape() == Shape{2, 5, 4, 2});

    // direct nested-loop oracle
    auto& xv = x->value;
    auto& wv = w->value;
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t oh = 0; oh < 5; ++oh)
            for (int64_t ow = 0; ow < 4; ++ow)
                for (int64_t oc = 0; oc < 2; ++oc) {
                    double acc = b->value[oc];
                    for (int64_t kh = 0; kh < 3; ++kh)
                        for (int64_t kw = 0; kw < 3; ++kw) {
                            const int64_t ih = oh - 1 + kh, iw = ow - 1 + kw;
                            if (ih < 0 || ih >= 5 || iw < 0 || iw >= 4) continue;
                            for (int64_t c = 0; c < 3; ++c)
                                acc += xv[((n * 5 + ih) * 4 + iw) * 3 + c] *
                                       wv[((kh * 3 + kw) * 3 + c) * 2 + oc];
                        }
                    CHECK(y->value[((n * 5 + oh) * 4 + ow) * 2 + oc] ==
                          doctest::Approx(acc).epsilon(1e-10));
                }

    CHECK(fd_max_rel_err({x, w, b}, [&] { return weighted_sum(conv2d(x, w, b, 1, 1)); }) < kFdTol);
}

TEST_CASE("strided conv2d halves spatial dims and backprops") {
    Var x = leaf(rand_tensor({1, 6, 4, 2}, 25));
    Var w = leaf(rand_tensor({3, 3, 2, 3}, 26));
    Var b = leaf(rand_tensor({3}, 27));
    Var y = conv2d(x, w, b, 2, 1);
    CHECK(y->value.shape() == Shape{1, 3, 2, 3});
    CHECK(fd_max_rel_err({x, w, b}, [&] { return weighted_sum(conv2d(x, w, b, 2, 1)); }) < kFdTol);
}

TEST_CASE("conv_temporal: same-length, strided, and T=1 padding cases") {
    SUBCASE("k=3 pad=1 keeps T and backprops") {
        Var x = leaf(rand_tensor({1, 4, 2, 3, 2}, 28));
        Var w = leaf(rand_tensor({3, 2, 2}, 29));
        Var b = leaf(rand_tensor({2}, 30));
        Var y = conv_temporal(x, w, b, 1, 1);
        CHECK(y->value.shape() == Shape{1, 4, 2, 3, 2});
        CHECK(fd_max_rel_err({x, w, b}, [&] { return weighted_sum(conv_temporal(x, w, b, 1, 1)); }) <
              kFdTol);
    }
    SUBCASE("k=2 stride=2 halves T") {
        Var x = leaf(rand_tensor({1, 6, 2, 2, 3}, 31));
        Var w = leaf(rand_tensor({2, 3, 3}, 32));
        Var b = leaf(rand_tensor({3}, 33));
        Var y = conv_temporal(x, w, b, 2, 0);
        CHECK(y->value.shape() == Shape{1, 3, 2, 2, 3});
        CHECK(fd_max_rel_err({x, w, b}, [&] { return weighted_sum(conv_temporal(x, w, b, 2, 0)); }) <
              kFdTol);
    }
    SUBCASE("T=1 with k=3 pad=1 still yields one frame") {
        Var x = leaf(rand_tensor({2, 1, 2, 2, 2}, 34));
        Var w = leaf(rand_tensor({3, 2, 2}, 35));
        Var y = conv_temporal(x, w, Var(), 1, 1);
        CHECK(y->value.shape() == Shape{2, 1, 2, 2, 2});
    }
    SUBCASE("identity-initialized kernel is a no-op") {
        ParamStore ps;
        Rng rng(1);
        auto ct = make_conv_temporal(ps, "t", ParamGroup::Temporal, 3, 3, 3, 1, 1,
                                     TemporalInit::Identity, rng);
        Var x = constant(rand_tensor({1, 5, 2, 2, 3}, 36));
        Var y = ct(x);
        for (int64_t i = 0; i < x->value.numel(); ++i)
            CHECK(y->value[i] == doctest::Approx(x->value[i]).epsilon(1e-14));
    }
}

TEST_CASE("softmax_last normalizes rows and matches FD") {
    Var a = leaf(rand_tensor({3, 5}, 37));
    Var y = softmax_last(a);
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < 5; ++j) {
            s += y->value[r * 5 + j];
            CHECK(y->value[r * 5 + j] > 0.0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(softmax_last(a)); }) < kFdTol);
}

TEST_CASE("layer_norm_last standardizes rows and matches FD") {
    Var a = leaf(rand_tensor({4, 6}, 38, 2.0));
    Var y = layer_norm_last(a);
    for (int64_t r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (int64_t j = 0; j < 6; ++j) mean += y->value[r * 6 + j];
        mean /= 6.0;
        for (int64_t j = 0; j < 6; ++j) {
            const double d = y->value[r * 6 + j] - mean;
            var += d * d;
        }
        CHECK(std::abs(mean) < 1e-10);
        CHECK(var / 6.0 == doctest::Approx(1.0).epsilon(1e-3));
    }
    CHECK(fd_max_rel_err({a}, [&] { return weighted_sum(layer_norm_last(a)); }, 1e-6) < kFdTol);
}

TEST_CASE("group_norm statistics and gradients for x, gamma, beta") {
    Var x = leaf(rand_tensor({2, 3, 8}, 39, 1.5));
    Var gamma = leaf(rand_tensor({8}, 40));
    Var beta = leaf(rand_tensor({8}, 41));
    Var y = group_norm(x, 4, gamma, beta);
    CHECK(y->value.shape() == x->value.shape());
    CHECK(fd_max_rel_err({x, gamma, beta},
                         [&] { return weighted_sum(group_norm(x, 4, gamma, beta)); }, 1e-6) <
          kFdTol);
    CHECK_THROWS_AS(group_norm(x, 3, gamma, beta), InvalidArgument);
}

TEST_CASE("avgpool and nearest upsample") {
    Var x = leaf(rand_tensor({2, 4, 6, 3}, 42));
    Var p = avgpool2d_2x(x);
    CHECK(p->value.shape() == Shape{2, 2, 3, 3});
    CHECK(p->value[0] == doctest::Approx(0.25 * (x->value[0 * 3] + x->value[1 * 3] +
                                                 x->value[(1 * 6 + 0) * 3] +
                                                 x->value[(1 * 6 + 1) * 3])));
    CHECK(fd_max_rel_err({x}, [&] { return weighted_sum(avgpool2d_2x(x)); }) < kFdTol);

    Var u = upsample_nearest2d_2x(x);
    CHECK(u->value.shape() == Shape{2, 8, 12, 3});
    CHECK(u->value[(0 * 12 + 1) * 3 + 2] == x->value[2]);
    CHECK(fd_max_rel_err({x}, [&] { return weighted_sum(upsample_nearest2d_2x(x)); }) < kFdTol);
}

TEST_CASE("multi-head attention composite backprops through q/k/v/o") {
    ParamStore ps;
    Rng rng(2);
    auto att = make_attention(ps, "att", ParamGroup::Dit, 8, 2, rng);
    Var xq = leaf(rand_tensor({2, 3, 8}, 43, 0.5));
    Var xkv = leaf(rand_tensor({2, 5, 8}, 44, 0.5));
    Var y = att(xq, xkv);
    CHECK(y->value.shape() == Shape{2, 3, 8});
    std::vector<Var> leaves = {xq, xkv, att.q.w, att.k.w, att.v.w, att.o.w, att.o.b};
    CHECK(fd_max_rel_err(leaves, [&] { return weighted_sum(att(xq, xkv)); }, 1e-6) < kFdTol);
}

TEST_CASE("value reused twice accumulates both gradient paths") {
    Var a = leaf(Tensor({2}, {3.0, -1.0}));
    // loss = sum(a*a) -> d/da = 2a
    backward(reduce_sum_all(mul(a, a)));
    CHECK(a->grad[0] == doctest::Approx(6.0));
    CHECK(a->grad[1] == doctest::Approx(-2.0));
}

TEST_CASE("diamond-shaped graph sums contributions") {
    Var a = leaf(Tensor({1}, {2.0}));
    Var left = scale(a, 3.0);
    Var right = mul(a, a);
    backward(reduce_sum_all(add(left, right)));
    // d/da (3a + a^2) = 3 + 2a = 7
    CHECK(a->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("no-grad mode builds detached nodes") {
    Var a = leaf(Tensor({2}, {1.0, 2.0}));
    {
        NoGradGuard ng;
        Var y = mul(a, a);
        CHECK_FALSE(y->requires_grad);
        CHECK(y->parents.empty());
    }
    CHECK(grad_enabled());
    Var y2 = mul(a, a);
    CHECK(y2->requires_grad);
}

TEST_CASE("backward validates its input") {
    Var a = leaf(rand_tensor({3}, 45));
    CHECK_THROWS_AS(backward(mul(a, a)), InvalidArgument);  // non-scalar
    Var c = constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(backward(c), InvalidState);  // no grad required
}

TEST_CASE("mse helper value and gradient") {
    Var p = leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Var t = constant(Tensor({2, 2}, {1.0, 1.0, 1.0, 1.0}));
    Var l = mse(p, t);
    CHECK(l->value[0] == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0));
    backward(l);
    CHECK(p->grad[2] == doctest::Approx(2.0 * 2.0 / 4.0));
    CHECK(fd_max_rel_err({p}, [&] { return mse(p, t); }) < kFdTol);
}

TEST_CASE("parameter store groups, lookup, and zero_grad") {
    ParamStore ps;
    Rng rng(3);
    make_linear(ps, "enc.l1", ParamGroup::ConditioningEncoders, 4, 8, rng);
    make_conv2d(ps, "unet.c1", ParamGroup::Spatial, 3, 6, 3, 1, 1, rng);
    make_conv_temporal(ps, "t.c1", ParamGroup::Temporal, 6, 6, 3, 1, 1, TemporalInit::Random, rng);

    CHECK(ps.in_group(ParamGroup::ConditioningEncoders).size() == 2);
    CHECK(ps.in_group(ParamGroup::Spatial).size() == 2);
    CHECK(ps.in_group(ParamGroup::Dit).empty());
    CHECK(ps.group_numel(ParamGroup::ConditioningEncoders) == 4 * 8 + 8);
    CHECK(ps.find("unet.c1.w") != nullptr);
    CHECK(ps.find("missing") == nullptr);
    CHECK_THROWS_AS(make_linear(ps, "enc.l1", ParamGroup::Spatial, 2, 2, rng), InvalidState);

    Var w = ps.find("enc.l1.w")->var;
    backward(reduce_sum_all(mul(w, w)));
    CHECK(w->grad.numel() == 32);
    ps.zero_grad();
    for (int64_t i = 0; i < w->grad.numel(); ++i) CHECK(w->grad[i] == 0.0);
}

TEST_CASE("group names round-trip") {
    for (auto g : kAllParamGroups) CHECK(group_from_name(group_name(g)) == g);
    CHECK_THROWS_AS(group_from_name("bogus"), InvalidArgument);
}

TEST_CASE("timestep features are bounded, even-dim, distinct per t") {
    Tensor f = timestep_features({0.0, 10.0, 500.0}, 16);
    CHECK(f.shape() == Shape{3, 16});
    for (int64_t i = 0; i < f.numel(); ++i) {
        CHECK(f[i] <= 1.0);
        CHECK(f[i] >= -1.0);
    }
    // t=0 gives sin=0, cos=1 halves
    for (int64_t j = 0; j < 8; ++j) {
        CHECK(f[j] == doctest::Approx(0.0));
        CHECK(f[8 + j] == doctest::Approx(1.0));
    }
    double diff = 0.0;
    for (int64_t j = 0; j < 16; ++j) diff += std::abs(f[16 + j] - f[32 + j]);
    CHECK(diff > 0.1);
    CHECK_THROWS_AS(timestep_features({1.0}, 7), InvalidArgument);
}
