#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace vton::nn {

// Reverse-mode autodiff over dense double tensors. Each op builds a Node
// holding the forward value plus a closure that scatters the node's gradient
// into its parents. backward() runs the closures in reverse topological
// order. When grad mode is off (sampling, evaluation) ops produce detached
// nodes and no graph is retained.
struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    bool prev_;
};

Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad = true);

// Runs backprop from a scalar node (numel == 1), seeding its grad with 1.
void backward(const Var& loss);

// ---- elementwise ----
// Binary ops broadcast `b` against `a` when b has the same rank and each of
// its dims is either equal to a's or 1 (gradient sums over broadcast dims).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
// Hard clamp to [0,1] with pass-through gradient on the closed interval,
// so a gate parked exactly at a boundary can still move.
Var clamp01(const Var& a);

// ---- reductions ----
Var reduce_mean_all(const Var& a);
Var reduce_sum_all(const Var& a);

// ---- shape ----
Var reshape(const Var& a, Shape s);
Var permute(const Var& a, const std::vector<int>& perm);
Var concat_last(const std::vector<Var>& xs);
Var slice_last(const Var& a, int64_t start, int64_t len);
// [B, ...] -> [B*times, ...], each batch row repeated `times` consecutively.
Var repeat_batch(const Var& a, int64_t times);
// Nearest-neighbor x2 along the time axis of a (B,T,H,W,C) tensor.
Var repeat_temporal2(const Var& a);
// Broadcast a length-C vector to an arbitrary [..., C] shape.
Var expand_channel_vector(const Var& v, Shape shape);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);               // [M,K] x [K,N]
Var bmm(const Var& a, const Var& b);                  // [B,M,K] x [B,K,N]
Var linear(const Var& x, const Var& w, const Var& b);  // x [..., in], w [in,out], b [out] (empty Var => no bias)

// ---- convolution ----
// x [N,H,W,C], w [KH,KW,C,OC], b [OC] or empty. Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// x [B,T,H,W,C], w [K,C,OC], conv along T with zero padding.
Var conv_temporal(const Var& x, const Var& w, const Var& b, int stride, int pad);

// ---- normalization / activation maps ----
Var softmax_last(const Var& a);
Var layer_norm_last(const Var& a, double eps = 1e-5);
// x [N,...,C] grouped over channels; stats over all non-batch dims within a
// group. gamma/beta are per-channel [C].
Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- resize ----
Var avgpool2d_2x(const Var& x);           // [N,H,W,C] -> [N,H/2,W/2,C]
Var upsample_nearest2d_2x(const Var& x);  // [N,H,W,C] -> [N,2H,2W,C]

// ---- helpers ----
Var mse(const Var& pred, const Var& target);

}  // namespace vton::nn
