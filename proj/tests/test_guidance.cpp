#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/rng.hpp"
#include "guidance/guidance.hpp"

using namespace vton;
using namespace vton::guidance;

namespace {

// Encodes which conditioning inputs a call saw (0..7). Garment appearance
// and garment pose must always travel together.
int pattern_of(const data::TryOnConditioning& c) {
    REQUIRE(c.null_garment == c.null_garment_pose);
    return (c.null_agnostic ? 0 : 1) | (c.null_garment ? 0 : 2) | (c.null_person_pose ? 0 : 4);
}

struct StubDenoiser {
    std::array<double, 8> value_by_pattern{};
    mutable int calls = 0;
    mutable std::vector<int> seen;

    Tensor operator()(const Tensor&, const std::vector<int64_t>&,
                      const data::TryOnConditioning& c) const {
        ++calls;
        const int p = pattern_of(c);
        seen.push_back(p);
        return Tensor::full({2, 3}, value_by_pattern[size_t(p)]);
    }
};

}  // namespace

TEST_CASE("make_tryon_schedule builds the fixed cumulative order") {
    auto s = make_tryon_schedule(1.0, 1.0, 3.0, 1.0);
    REQUIRE(s.groups.size() == 3);
    CHECK(s.groups[0].agnostic);
    CHECK(!s.groups[0].garment);
    CHECK(s.groups[1].garment);
    CHECK(s.groups[2].person_pose);
    CHECK(s.weights == std::vector<double>{1.0, 1.0, 3.0, 1.0});
    CHECK(s.history == HistoryMode::Literal);
    CHECK_NOTHROW(make_tryon_schedule(1, 1, 1, 1));
    CHECK_THROWS_AS(make_tryon_schedule(1, 1, std::nan(""), 1), InvalidArgument);
}

TEST_CASE("hand-traced guidance on the constant stub") {
    // predictions 0,1,2,3 as conditioning accumulates, weights (1,1,3,1):
    // 0 + 1*(1-0) + 3*(2-1) + 1*(3-2) = 5
    StubDenoiser stub;
    stub.value_by_pattern[0] = 0.0;  // unconditional
    stub.value_by_pattern[1] = 1.0;  // agnostic
    stub.value_by_pattern[3] = 2.0;  // + garment
    stub.value_by_pattern[7] = 3.0;  // + person pose
    auto sched = make_tryon_schedule(1, 1, 3, 1);
    Tensor z = Tensor::zeros({2, 3});

    Tensor out = split_cfg(std::ref(stub), z, {0}, data::TryOnConditioning{}, sched);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 5.0);
    CHECK(stub.calls == 4);  // exactly n+1 denoiser invocations
    CHECK(stub.seen == std::vector<int>{0, 1, 3, 7});
}

TEST_CASE("unit weights telescope to the fully conditional prediction") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        StubDenoiser stub;
        // integer-valued stub outputs keep the telescoping arithmetic exact
        for (auto& v : stub.value_by_pattern) v = double(rng.uniform_int(-50, 50));
        auto sched = make_tryon_schedule(1, 1, 1, 1);
        Tensor out = split_cfg(std::ref(stub), Tensor::zeros({4}), {0},
                               data::TryOnConditioning{}, sched);
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == stub.value_by_pattern[7]);
    }
}

TEST_CASE("weights (1,0,0,0) reduce to the unconditional prediction") {
    StubDenoiser stub;
    stub.value_by_pattern = {0.7, 1.1, 0, 2.2, 0, 0, 0, 3.3};
    Tensor out = split_cfg(std::ref(stub), Tensor::zeros({4}), {0}, data::TryOnConditioning{},
                           make_tryon_schedule(1, 0, 0, 0));
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.7);
}

TEST_CASE("single group reduces to standard classifier-free guidance") {
    Rng rng(9);
    for (double w : {0.0, 0.5, 1.0, 2.0, 7.5, -1.0}) {
        const double e0 = rng.normal(), e1 = rng.normal();
        StubDenoiser stub;
        stub.value_by_pattern[0] = e0;
        stub.value_by_pattern[2] = e1;
        GuidanceSchedule sched;
        sched.groups.push_back({"garment", false, true, false});
        sched.weights = {1.0, w};
        Tensor out = split_cfg(std::ref(stub), Tensor::zeros({2}), {0},
                               data::TryOnConditioning{}, sched);
        CHECK(out[0] == doctest::Approx(e0 + w * (e1 - e0)).epsilon(1e-6));
        CHECK(stub.calls == 2);
    }
}

TEST_CASE("literal mode: each stub prediction enters with its derived coefficient") {
    // out = w0(1-w1)*e0 + (w1-w2)*e1 + (w2-w3)*e2 + w3*e3; verify by
    // perturbing one term at a time
    const std::array<double, 4> w = {1.3, 0.8, 2.5, 0.6};
    const std::array<double, 4> coeff = {w[0] * (1.0 - w[1]), w[1] - w[2], w[2] - w[3], w[3]};
    const std::array<int, 4> patterns = {0, 1, 3, 7};
    auto run = [&](const std::array<double, 8>& vals) {
        StubDenoiser stub;
        stub.value_by_pattern = vals;
        GuidanceSchedule sched = make_tryon_schedule(w[0], w[1], w[2], w[3]);
        return split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                         sched)[0];
    };
    std::array<double, 8> base = {0.3, -1.2, 0, 0.9, 0, 0, 0, 2.1};
    const double y0 = run(base);
    for (size_t i = 0; i < 4; ++i) {
        auto perturbed = base;
        perturbed[size_t(patterns[i])] += 0.25;
        CHECK(run(perturbed) - y0 == doctest::Approx(coeff[i] * 0.25).epsilon(1e-9));
    }
}

TEST_CASE("literal vs intuitive history differ exactly when w0 != 1") {
    StubDenoiser stub;
    stub.value_by_pattern = {1.0, 2.0, 0, 4.0, 0, 0, 0, 8.0};
    auto sched = make_tryon_schedule(2, 1, 3, 1);
    Tensor lit = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                           sched);
    CHECK(lit[0] == 12.0);  // 2*1 + 1*(2-2) + 3*(4-2) + 1*(8-4)

    sched.history = HistoryMode::Intuitive;
    Tensor intu = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                            sched);
    CHECK(intu[0] == 13.0);  // 2*1 + 1*(2-1) + 3*(4-2) + 1*(8-4)

    // with w0 == 1 the two modes coincide
    auto sched1 = make_tryon_schedule(1, 1, 3, 1);
    Tensor a = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                         sched1);
    sched1.history = HistoryMode::Intuitive;
    Tensor b = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                         sched1);
    CHECK(a[0] == b[0]);
}

TEST_CASE("group order matters for unequal weights") {
    StubDenoiser stub;
    Rng rng(17);
    for (auto& v : stub.value_by_pattern) v = rng.normal();
    GuidanceSchedule forward_order;
    forward_order.groups = {{"agnostic", true, false, false},
                            {"garment", false, true, false},
                            {"person_pose", false, false, true}};
    forward_order.weights = {1.0, 2.0, 0.5, 1.5};
    GuidanceSchedule swapped = forward_order;
    std::swap(swapped.groups[0], swapped.groups[1]);

    Tensor a = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                         forward_order);
    Tensor b = split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{},
                         swapped);
    CHECK(a[0] != b[0]);
}

TEST_CASE("call count equals groups+1 for any group count") {
    for (size_t n = 0; n <= 4; ++n) {
        StubDenoiser stub;
        GuidanceSchedule sched;
        const std::array<CondGroup, 4> pool = {CondGroup{"a", true, false, false},
                                               CondGroup{"g", false, true, false},
                                               CondGroup{"p", false, false, true},
                                               CondGroup{"again", true, false, false}};
        for (size_t i = 0; i < n; ++i) sched.groups.push_back(pool[i]);
        sched.weights.assign(n + 1, 1.0);
        split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, data::TryOnConditioning{}, sched);
        CHECK(stub.calls == int(n) + 1);
    }
}

TEST_CASE("schedule validation") {
    GuidanceSchedule s;
    s.groups.push_back({"agnostic", true, false, false});
    s.weights = {1.0};  // one short
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.weights = {1.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.weights = {1.0, 2.0};
    CHECK_NOTHROW(s.validate());
    StubDenoiser stub;
    s.weights = {1.0};
    CHECK_THROWS_AS(split_cfg(std::ref(stub), Tensor::zeros({1}), {0},
                              data::TryOnConditioning{}, s),
                    InvalidArgument);
}

TEST_CASE("guidance overrides caller null flags per term") {
    StubDenoiser stub;
    data::TryOnConditioning cond;
    cond.null_agnostic = true;  // stale caller flag must not leak through
    cond.null_person_pose = true;
    split_cfg(std::ref(stub), Tensor::zeros({1}), {0}, cond, make_tryon_schedule(1, 1, 1, 1));
    CHECK(stub.seen == std::vector<int>{0, 1, 3, 7});
}
