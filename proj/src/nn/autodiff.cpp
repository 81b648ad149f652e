#include "nn/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "core/error.hpp"

namespace vton::nn {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

bool g_grad_enabled = true;

void req(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                rg = true;
                break;
            }
        }
    }
    if (rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

// Element strides of a row-major shape.
std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

// Strides for reading `b` broadcast against `a`: 0 where b's dim is 1.
std::vector<int64_t> broadcast_strides(const Shape& a, const Shape& b, const char* op) {
    req(a.size() == b.size(), std::string(op) + ": rank mismatch");
    auto st = strides_of(b);
    for (size_t i = 0; i < b.size(); ++i) {
        if (b[i] == a[i]) continue;
        req(b[i] == 1, std::string(op) + ": dim " + std::to_string(i) + " not broadcastable");
        st[i] = 0;
    }
    return st;
}

// Walks a's index space applying fn(a_linear, b_offset).
template <typename F>
void broadcast_walk(const Shape& a_shape, const std::vector<int64_t>& b_strides, F&& fn) {
    const size_t nd = a_shape.size();
    std::vector<int64_t> idx(nd, 0);
    int64_t total = 1;
    for (int64_t d : a_shape) total *= d;
    int64_t boff = 0;
    for (int64_t r = 0; r < total; ++r) {
        fn(r, boff);
        for (int i = static_cast<int>(nd) - 1; i >= 0; --i) {
            const auto ui = static_cast<size_t>(i);
            ++idx[ui];
            boff += b_strides[ui];
            if (idx[ui] < a_shape[ui]) break;
            boff -= b_strides[ui] * a_shape[ui];
            idx[ui] = 0;
        }
    }
}

double sigmoid(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

enum class BinOp { Add, Sub, Mul };

Var binary(const Var& a, const Var& b, BinOp op, const char* name) {
    req(a && b, std::string(name) + ": null operand");
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    auto bs = broadcast_strides(av.shape(), bv.shape(), name);
    Tensor out(av.shape());
    const double* ap = av.data();
    const double* bp = bv.data();
    double* op_ = out.data();
    switch (op) {
        case BinOp::Add:
            broadcast_walk(av.shape(), bs, [&](int64_t r, int64_t bo) { op_[r] = ap[r] + bp[bo]; });
            break;
        case BinOp::Sub:
            broadcast_walk(av.shape(), bs, [&](int64_t r, int64_t bo) { op_[r] = ap[r] - bp[bo]; });
            break;
        case BinOp::Mul:
            broadcast_walk(av.shape(), bs, [&](int64_t r, int64_t bo) { op_[r] = ap[r] * bp[bo]; });
            break;
    }
    return make(std::move(out), {a, b}, [a, b, bs, op](Node& n) {
        const double* g = n.grad.data();
        if (a->requires_grad) {
            double* ga = a->ensure_grad().data();
            if (op == BinOp::Mul) {
                const double* bp2 = b->value.data();
                broadcast_walk(a->value.shape(), bs,
                               [&](int64_t r, int64_t bo) { ga[r] += g[r] * bp2[bo]; });
            } else {
                const int64_t total = a->value.numel();
                for (int64_t r = 0; r < total; ++r) ga[r] += g[r];
            }
        }
        if (b->requires_grad) {
            double* gb = b->ensure_grad().data();
            const double sign = (op == BinOp::Sub) ? -1.0 : 1.0;
            if (op == BinOp::Mul) {
                const double* ap2 = a->value.data();
                broadcast_walk(a->value.shape(), bs,
                               [&](int64_t r, int64_t bo) { gb[bo] += g[r] * ap2[r]; });
            } else {
                broadcast_walk(a->value.shape(), bs,
                               [&](int64_t r, int64_t bo) { gb[bo] += sign * g[r]; });
            }
        }
    });
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

void backward(const Var& loss) {
    req(loss != nullptr, "backward: null loss");
    if (loss->value.numel() != 1) throw InvalidArgument("backward: loss must be a scalar");
    if (!loss->requires_grad) throw InvalidState("backward: loss does not require grad");

    // Iterative post-order DFS; reversed post-order runs each node before its
    // inputs, which is the gradient propagation order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad().data()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul, "mul"); }

Var scale(const Var& a, double s) {
    Tensor out(a->value.shape());
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a->value.data()[i] * s;
    return make(std::move(out), {a}, [a, s, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a->value.data()[i] + s;
    return make(std::move(out), {a}, [a, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
}

Var silu(const Var& a) {
    Tensor out(a->value.shape());
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double x = a->value.data()[i];
        out.data()[i] = x * sigmoid(x);
    }
    return make(std::move(out), {a}, [a, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t i = 0; i < n; ++i) {
            const double x = a->value.data()[i];
            const double s = sigmoid(x);
            ga[i] += g[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Var clamp01(const Var& a) {
    Tensor out(a->value.shape());
    const int64_t n = a->value.numel();
    for (int64_t i = 0; i < n; ++i)
        out.data()[i] = std::min(1.0, std::max(0.0, a->value.data()[i]));
    return make(std::move(out), {a}, [a, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t i = 0; i < n; ++i) {
            const double x = a->value.data()[i];
            if (x >= 0.0 && x <= 1.0) ga[i] += g[i];
        }
    });
}

Var reduce_mean_all(const Var& a) {
    const int64_t n = a->value.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a->value.data()[i];
    return make(Tensor::scalar(s / static_cast<double>(n)), {a}, [a, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double g = nd.grad.data()[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

Var reduce_sum_all(const Var& a) {
    const int64_t n = a->value.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a->value.data()[i];
    return make(Tensor::scalar(s), {a}, [a, n](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double g = nd.grad.data()[0];
        for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
}

Var reshape(const Var& a, Shape s) {
    Tensor out = a->value.reshaped(std::move(s));
    return make(std::move(out), {a}, [a](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        const int64_t n = a->value.numel();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
}

Var permute(const Var& a, const std::vector<int>& perm) {
    const Shape& in = a->value.shape();
    req(perm.size() == in.size(), "permute: rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        req(perm[i] >= 0 && static_cast<size_t>(perm[i]) < in.size() && !seen[static_cast<size_t>(perm[i])],
            "permute: invalid permutation");
        seen[static_cast<size_t>(perm[i])] = true;
        out_shape[i] = in[static_cast<size_t>(perm[i])];
    }
    auto in_strides = strides_of(in);
    // Stride to advance in the input when output index i increments.
    std::vector<int64_t> step(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) step[i] = in_strides[static_cast<size_t>(perm[i])];

    Tensor out(out_shape);
    const double* src = a->value.data();
    double* dst = out.data();
    broadcast_walk(out_shape, step, [&](int64_t r, int64_t off) { dst[r] = src[off]; });
    return make(std::move(out), {a}, [a, out_shape, step](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        broadcast_walk(out_shape, step, [&](int64_t r, int64_t off) { ga[off] += g[r]; });
    });
}

Var concat_last(const std::vector<Var>& xs) {
    req(!xs.empty(), "concat_last: empty input list");
    const Shape& first = xs[0]->value.shape();
    req(first.size() >= 1, "concat_last: rank 0 input");
    int64_t total_c = 0;
    for (const auto& x : xs) {
        const Shape& s = x->value.shape();
        req(s.size() == first.size(), "concat_last: rank mismatch");
        for (size_t i = 0; i + 1 < s.size(); ++i)
            req(s[i] == first[i], "concat_last: leading dim mismatch");
        total_c += s.back();
    }
    Shape out_shape = first;
    out_shape.back() = total_c;
    Tensor out(out_shape);
    const int64_t rows = out.numel() / total_c;
    int64_t col0 = 0;
    for (const auto& x : xs) {
        const int64_t c = x->value.shape().back();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * total_c + col0, x->value.data() + r * c,
                        static_cast<size_t>(c) * sizeof(double));
        col0 += c;
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    return make(std::move(out), parents, [xs, rows, total_c](Node& nd) {
        const double* g = nd.grad.data();
        int64_t col = 0;
        for (const auto& x : xs) {
            const int64_t c = x->value.shape().back();
            if (x->requires_grad) {
                double* gx = x->ensure_grad().data();
                for (int64_t r = 0; r < rows; ++r) {
                    const double* src = g + r * total_c + col;
                    double* dst = gx + r * c;
                    for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
                }
            }
            col += c;
        }
    });
}

Var slice_last(const Var& a, int64_t start, int64_t len) {
    const Shape& s = a->value.shape();
    req(s.size() >= 1, "slice_last: rank 0 input");
    const int64_t c = s.back();
    req(start >= 0 && len > 0 && start + len <= c, "slice_last: range out of bounds");
    Shape out_shape = s;
    out_shape.back() = len;
    Tensor out(out_shape);
    const int64_t rows = a->value.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * len, a->value.data() + r * c + start,
                    static_cast<size_t>(len) * sizeof(double));
    return make(std::move(out), {a}, [a, start, len, rows, c](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t r = 0; r < rows; ++r) {
            double* dst = ga + r * c + start;
            const double* src = g + r * len;
            for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
        }
    });
}

Var repeat_batch(const Var& a, int64_t times) {
    req(times >= 1, "repeat_batch: times must be >= 1");
    const Shape& s = a->value.shape();
    req(s.size() >= 1, "repeat_batch: rank 0 input");
    Shape out_shape = s;
    out_shape[0] = s[0] * times;
    Tensor out(out_shape);
    const int64_t block = a->value.numel() / s[0];
    for (int64_t b = 0; b < s[0]; ++b)
        for (int64_t j = 0; j < times; ++j)
            std::memcpy(out.data() + (b * times + j) * block, a->value.data() + b * block,
                        static_cast<size_t>(block) * sizeof(double));
    const int64_t batch = s[0];
    return make(std::move(out), {a}, [a, times, block, batch](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t b = 0; b < batch; ++b)
            for (int64_t j = 0; j < times; ++j) {
                const double* src = g + (b * times + j) * block;
                double* dst = ga + b * block;
                for (int64_t k = 0; k < block; ++k) dst[k] += src[k];
            }
    });
}

Var repeat_temporal2(const Var& a) {
    const Shape& s = a->value.shape();
    req(s.size() == 5, "repeat_temporal2: expected (B,T,H,W,C)");
    Shape out_shape = s;
    out_shape[1] = s[1] * 2;
    Tensor out(out_shape);
    const int64_t B = s[0], T = s[1];
    const int64_t frame = s[2] * s[3] * s[4];
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) {
            const double* src = a->value.data() + (b * T + t) * frame;
            double* d0 = out.data() + (b * 2 * T + 2 * t) * frame;
            std::memcpy(d0, src, static_cast<size_t>(frame) * sizeof(double));
            std::memcpy(d0 + frame, src, static_cast<size_t>(frame) * sizeof(double));
        }
    return make(std::move(out), {a}, [a, B, T, frame](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < T; ++t) {
                double* dst = ga + (b * T + t) * frame;
                const double* s0 = g + (b * 2 * T + 2 * t) * frame;
                for (int64_t k = 0; k < frame; ++k) dst[k] += s0[k] + s0[frame + k];
            }
    });
}

Var expand_channel_vector(const Var& v, Shape shape) {
    req(v->value.ndim() == 1, "expand_channel_vector: vector must be 1-D");
    const int64_t c = v->value.numel();
    req(!shape.empty() && shape.back() == c, "expand_channel_vector: last dim mismatch");
    Tensor out(shape);
    const int64_t rows = out.numel() / c;
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * c, v->value.data(), static_cast<size_t>(c) * sizeof(double));
    return make(std::move(out), {v}, [v, rows, c](Node& nd) {
        if (!v->requires_grad) return;
        double* gv = v->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) gv[j] += g[r * c + j];
    });
}

Var matmul(const Var& a, const Var& b) {
    const Shape& as = a->value.shape();
    const Shape& bs = b->value.shape();
    req(as.size() == 2 && bs.size() == 2, "matmul: expected 2-D operands");
    req(as[1] == bs[0], "matmul: inner dim mismatch " + shape_str(a->value.shape()) + " x " + shape_str(b->value.shape()));
    const int64_t M = as[0], K = as[1], N = bs[1];
    Tensor out({M, N});
    ConstMatMap A(a->value.data(), M, K), B(b->value.data(), K, N);
    MatMap(out.data(), M, N).noalias() = A * B;
    return make(std::move(out), {a, b}, [a, b, M, K, N](Node& nd) {
        ConstMatMap G(nd.grad.data(), M, N);
        if (a->requires_grad) {
            ConstMatMap B(b->value.data(), K, N);
            MatMap(a->ensure_grad().data(), M, K).noalias() += G * B.transpose();
        }
        if (b->requires_grad) {
            ConstMatMap A(a->value.data(), M, K);
            MatMap(b->ensure_grad().data(), K, N).noalias() += A.transpose() * G;
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    const Shape& as = a->value.shape();
    const Shape& bs = b->value.shape();
    req(as.size() == 3 && bs.size() == 3, "bmm: expected 3-D operands");
    req(as[0] == bs[0], "bmm: batch dim mismatch");
    req(as[2] == bs[1], "bmm: inner dim mismatch");
    const int64_t Bn = as[0], M = as[1], K = as[2], N = bs[2];
    Tensor out({Bn, M, N});
    for (int64_t i = 0; i < Bn; ++i) {
        ConstMatMap A(a->value.data() + i * M * K, M, K);
        ConstMatMap B(b->value.data() + i * K * N, K, N);
        MatMap(out.data() + i * M * N, M, N).noalias() = A * B;
    }
    return make(std::move(out), {a, b}, [a, b, Bn, M, K, N](Node& nd) {
        for (int64_t i = 0; i < Bn; ++i) {
            ConstMatMap G(nd.grad.data() + i * M * N, M, N);
            if (a->requires_grad) {
                ConstMatMap B(b->value.data() + i * K * N, K, N);
                MatMap(a->ensure_grad().data() + i * M * K, M, K).noalias() += G * B.transpose();
            }
            if (b->requires_grad) {
                ConstMatMap A(a->value.data() + i * M * K, M, K);
                MatMap(b->ensure_grad().data() + i * K * N, K, N).noalias() += A.transpose() * G;
            }
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    req(ws.size() == 2, "linear: weight must be 2-D");
    req(!xs.empty() && xs.back() == ws[0], "linear: input dim mismatch " + shape_str(x->value.shape()) +
                                               " vs weight " + shape_str(w->value.shape()));
    const int64_t in = ws[0], out_c = ws[1];
    const int64_t rows = x->value.numel() / in;
    Shape out_shape = xs;
    out_shape.back() = out_c;
    Tensor out(out_shape);
    ConstMatMap X(x->value.data(), rows, in), W(w->value.data(), in, out_c);
    MatMap O(out.data(), rows, out_c);
    O.noalias() = X * W;
    if (b) {
        req(b->value.ndim() == 1 && b->value.numel() == out_c, "linear: bias dim mismatch");
        Eigen::Map<const Eigen::RowVectorXd> bias(b->value.data(), out_c);
        O.rowwise() += bias;
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), parents, [x, w, b, rows, in, out_c](Node& nd) {
        ConstMatMap G(nd.grad.data(), rows, out_c);
        if (x->requires_grad) {
            ConstMatMap W(w->value.data(), in, out_c);
            MatMap(x->ensure_grad().data(), rows, in).noalias() += G * W.transpose();
        }
        if (w->requires_grad) {
            ConstMatMap X(x->value.data(), rows, in);
            MatMap(w->ensure_grad().data(), in, out_c).noalias() += X.transpose() * G;
        }
        if (b && b->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> gb(b->ensure_grad().data(), out_c);
            gb += G.colwise().sum();
        }
    });
}

namespace {

struct Conv2dDims {
    int64_t N, H, W, C, KH, KW, OC, OH, OW;
    int stride, pad;
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    req(x.ndim() == 4, "conv2d: input must be (N,H,W,C)");
    req(w.ndim() == 4, "conv2d: weight must be (KH,KW,C,OC)");
    req(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    Conv2dDims d;
    d.N = x.dim(0);
    d.H = x.dim(1);
    d.W = x.dim(2);
    d.C = x.dim(3);
    d.KH = w.dim(0);
    d.KW = w.dim(1);
    req(w.dim(2) == d.C, "conv2d: channel mismatch");
    d.OC = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
    d.OW = (d.W + 2 * pad - d.KW) / stride + 1;
    req(d.OH >= 1 && d.OW >= 1, "conv2d: kernel larger than padded input");
    return d;
}

// Gathers padded input windows into rows of [N*OH*OW, KH*KW*C].
Tensor im2col(const Tensor& x, const Conv2dDims& d) {
    const int64_t cols = d.KH * d.KW * d.C;
    Tensor p = Tensor::zeros({d.N * d.OH * d.OW, cols});
    const double* src = x.data();
    double* dst = p.data();
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t oh = 0; oh < d.OH; ++oh)
            for (int64_t ow = 0; ow < d.OW; ++ow) {
                double* row = dst + ((n * d.OH + oh) * d.OW + ow) * cols;
                for (int64_t kh = 0; kh < d.KH; ++kh) {
                    const int64_t ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.H) continue;
                    for (int64_t kw = 0; kw < d.KW; ++kw) {
                        const int64_t iw = ow * d.stride - d.pad + kw;
                        if (iw < 0 || iw >= d.W) continue;
                        std::memcpy(row + (kh * d.KW + kw) * d.C,
                                    src + ((n * d.H + ih) * d.W + iw) * d.C,
                                    static_cast<size_t>(d.C) * sizeof(double));
                    }
                }
            }
    return p;
}

void col2im_add(const Tensor& p, const Conv2dDims& d, double* dst) {
    const int64_t cols = d.KH * d.KW * d.C;
    const double* src = p.data();
    for (int64_t n = 0; n < d.N; ++n)
        for (int64_t oh = 0; oh < d.OH; ++oh)
            for (int64_t ow = 0; ow < d.OW; ++ow) {
                const double* row = src + ((n * d.OH + oh) * d.OW + ow) * cols;
                for (int64_t kh = 0; kh < d.KH; ++kh) {
                    const int64_t ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.H) continue;
                    for (int64_t kw = 0; kw < d.KW; ++kw) {
                        const int64_t iw = ow * d.stride - d.pad + kw;
                        if (iw < 0 || iw >= d.W) continue;
                        double* out = dst + ((n * d.H + ih) * d.W + iw) * d.C;
                        const double* in = row + (kh * d.KW + kw) * d.C;
                        for (int64_t c = 0; c < d.C; ++c) out[c] += in[c];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Conv2dDims d = conv2d_dims(x->value, w->value, stride, pad);
    const int64_t rows = d.N * d.OH * d.OW;
    const int64_t cols = d.KH * d.KW * d.C;
    Tensor p = im2col(x->value, d);
    Tensor out({d.N, d.OH, d.OW, d.OC});
    ConstMatMap P(p.data(), rows, cols), W(w->value.data(), cols, d.OC);
    MatMap O(out.data(), rows, d.OC);
    O.noalias() = P * W;
    if (b) {
        req(b->value.ndim() == 1 && b->value.numel() == d.OC, "conv2d: bias dim mismatch");
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), d.OC);
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    // Patch matrix is rebuilt in backward rather than cached; conv activations
    // dominate training memory otherwise.
    return make(std::move(out), parents, [x, w, b, d, rows, cols](Node& nd) {
        ConstMatMap G(nd.grad.data(), rows, d.OC);
        if (w->requires_grad) {
            Tensor p2 = im2col(x->value, d);
            ConstMatMap P(p2.data(), rows, cols);
            MatMap(w->ensure_grad().data(), cols, d.OC).noalias() += P.transpose() * G;
        }
        if (x->requires_grad) {
            Tensor dp({rows, cols});
            ConstMatMap W(w->value.data(), cols, d.OC);
            MatMap(dp.data(), rows, cols).noalias() = G * W.transpose();
            col2im_add(dp, d, x->ensure_grad().data());
        }
        if (b && b->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> gb(b->ensure_grad().data(), d.OC);
            gb += G.colwise().sum();
        }
    });
}

namespace {

struct ConvTDims {
    int64_t B, T, S, C, K, OC, OT;
    int stride, pad;
};

ConvTDims convt_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    req(x.ndim() == 5, "conv_temporal: input must be (B,T,H,W,C)");
    req(w.ndim() == 3, "conv_temporal: weight must be (K,C,OC)");
    req(stride >= 1 && pad >= 0, "conv_temporal: bad stride/pad");
    ConvTDims d;
    d.B = x.dim(0);
    d.T = x.dim(1);
    d.S = x.dim(2) * x.dim(3);
    d.C = x.dim(4);
    d.K = w.dim(0);
    req(w.dim(1) == d.C, "conv_temporal: channel mismatch");
    d.OC = w.dim(2);
    d.stride = stride;
    d.pad = pad;
    d.OT = (d.T + 2 * pad - d.K) / stride + 1;
    req(d.OT >= 1, "conv_temporal: kernel larger than padded clip");
    return d;
}

// Rows ordered (b, ot, s) to match the (B,OT,H,W,OC) output layout.
Tensor im2col_t(const Tensor& x, const ConvTDims& d) {
    const int64_t cols = d.K * d.C;
    Tensor p = Tensor::zeros({d.B * d.OT * d.S, cols});
    const double* src = x.data();
    double* dst = p.data();
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t ot = 0; ot < d.OT; ++ot)
            for (int64_t k = 0; k < d.K; ++k) {
                const int64_t t = ot * d.stride - d.pad + k;
                if (t < 0 || t >= d.T) continue;
                const double* frame = src + (b * d.T + t) * d.S * d.C;
                double* rows = dst + (b * d.OT + ot) * d.S * cols + k * d.C;
                for (int64_t s = 0; s < d.S; ++s)
                    std::memcpy(rows + s * cols, frame + s * d.C,
                                static_cast<size_t>(d.C) * sizeof(double));
            }
    return p;
}

void col2im_t_add(const Tensor& p, const ConvTDims& d, double* dst) {
    const int64_t cols = d.K * d.C;
    const double* src = p.data();
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t ot = 0; ot < d.OT; ++ot)
            for (int64_t k = 0; k < d.K; ++k) {
                const int64_t t = ot * d.stride - d.pad + k;
                if (t < 0 || t >= d.T) continue;
                double* frame = dst + (b * d.T + t) * d.S * d.C;
                const double* rows = src + (b * d.OT + ot) * d.S * cols + k * d.C;
                for (int64_t s = 0; s < d.S; ++s)
                    for (int64_t c = 0; c < d.C; ++c) frame[s * d.C + c] += rows[s * cols + c];
            }
}

}  // namespace

Var conv_temporal(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const ConvTDims d = convt_dims(x->value, w->value, stride, pad);
    const int64_t rows = d.B * d.OT * d.S;
    const int64_t cols = d.K * d.C;
    Tensor p = im2col_t(x->value, d);
    Tensor out({d.B, d.OT, x->value.dim(2), x->value.dim(3), d.OC});
    ConstMatMap P(p.data(), rows, cols), W(w->value.data(), cols, d.OC);
    MatMap O(out.data(), rows, d.OC);
    O.noalias() = P * W;
    if (b) {
        req(b->value.ndim() == 1 && b->value.numel() == d.OC, "conv_temporal: bias dim mismatch");
        O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), d.OC);
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), parents, [x, w, b, d, rows, cols](Node& nd) {
        ConstMatMap G(nd.grad.data(), rows, d.OC);
        if (w->requires_grad) {
            Tensor p2 = im2col_t(x->value, d);
            ConstMatMap P(p2.data(), rows, cols);
            MatMap(w->ensure_grad().data(), cols, d.OC).noalias() += P.transpose() * G;
        }
        if (x->requires_grad) {
            Tensor dp({rows, cols});
            ConstMatMap W(w->value.data(), cols, d.OC);
            MatMap(dp.data(), rows, cols).noalias() = G * W.transpose();
            col2im_t_add(dp, d, x->ensure_grad().data());
        }
        if (b && b->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> gb(b->ensure_grad().data(), d.OC);
            gb += G.colwise().sum();
        }
    });
}

Var softmax_last(const Var& a) {
    const Shape& s = a->value.shape();
    req(!s.empty(), "softmax_last: rank 0 input");
    const int64_t d = s.back();
    const int64_t rows = a->value.numel() / d;
    Tensor out(s);
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * d;
        double* y = out.data() + r * d;
        double mx = x[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < d; ++j) y[j] *= inv;
    }
    return make(std::move(out), {a}, [a, rows, d](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        const double* y = nd.value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const double* gr = g + r * d;
            const double* yr = y + r * d;
            double dot = 0.0;
            for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            double* dst = ga + r * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += yr[j] * (gr[j] - dot);
        }
    });
}

Var layer_norm_last(const Var& a, double eps) {
    const Shape& s = a->value.shape();
    req(!s.empty(), "layer_norm_last: rank 0 input");
    const int64_t d = s.back();
    const int64_t rows = a->value.numel() / d;
    Tensor out(s);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += x[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = x[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        double* y = out.data() + r * d;
        for (int64_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * is;
    }
    return make(std::move(out), {a}, [a, rows, d, inv_std](Node& nd) {
        if (!a->requires_grad) return;
        double* ga = a->ensure_grad().data();
        const double* g = nd.grad.data();
        const double* y = nd.value.data();  // normalized values
        for (int64_t r = 0; r < rows; ++r) {
            const double* gr = g + r * d;
            const double* yr = y + r * d;
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                m1 += gr[j];
                m2 += gr[j] * yr[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            const double is = (*inv_std)[static_cast<size_t>(r)];
            double* dst = ga + r * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += is * (gr[j] - m1 - yr[j] * m2);
        }
    });
}

Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps) {
    const Shape& s = x->value.shape();
    req(s.size() >= 2, "group_norm: need at least (N,C)");
    const int64_t N = s[0];
    const int64_t C = s.back();
    req(groups >= 1 && C % groups == 0, "group_norm: channels not divisible by groups");
    req(gamma->value.ndim() == 1 && gamma->value.numel() == C, "group_norm: gamma dim mismatch");
    req(beta->value.ndim() == 1 && beta->value.numel() == C, "group_norm: beta dim mismatch");
    const int64_t mid = x->value.numel() / (N * C);
    const int64_t cg = C / groups;
    const int64_t group_elems = mid * cg;

    Tensor out(s);
    auto xhat = std::make_shared<Tensor>(s);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(N * groups));
    const double* xp = x->value.data();
    const double* gp = gamma->value.data();
    const double* bp = beta->value.data();
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t g = 0; g < groups; ++g) {
            double mean = 0.0;
            for (int64_t i = 0; i < mid; ++i) {
                const double* row = xp + (n * mid + i) * C + g * cg;
                for (int64_t c = 0; c < cg; ++c) mean += row[c];
            }
            mean /= static_cast<double>(group_elems);
            double var = 0.0;
            for (int64_t i = 0; i < mid; ++i) {
                const double* row = xp + (n * mid + i) * C + g * cg;
                for (int64_t c = 0; c < cg; ++c) {
                    const double d = row[c] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(group_elems);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<size_t>(n * groups + g)] = is;
            for (int64_t i = 0; i < mid; ++i) {
                const int64_t base = (n * mid + i) * C + g * cg;
                for (int64_t c = 0; c < cg; ++c) {
                    const double xh = (xp[base + c] - mean) * is;
                    xhat->data()[base + c] = xh;
                    out.data()[base + c] = gp[g * cg + c] * xh + bp[g * cg + c];
                }
            }
        }
    }
    return make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, N, C, mid, cg, groups, group_elems](Node& nd) {
                    const double* g = nd.grad.data();
                    const double* xh = xhat->data();
                    const double* gp = gamma->value.data();
                    if (gamma->requires_grad || beta->requires_grad) {
                        double* gg = gamma->requires_grad ? gamma->ensure_grad().data() : nullptr;
                        double* gb = beta->requires_grad ? beta->ensure_grad().data() : nullptr;
                        for (int64_t n = 0; n < N; ++n)
                            for (int64_t i = 0; i < mid; ++i) {
                                const int64_t base = (n * mid + i) * C;
                                for (int64_t c = 0; c < C; ++c) {
                                    if (gg) gg[c] += g[base + c] * xh[base + c];
                                    if (gb) gb[c] += g[base + c];
                                }
                            }
                    }
                    if (!x->requires_grad) return;
                    double* gx = x->ensure_grad().data();
                    for (int64_t n = 0; n < N; ++n)
                        for (int64_t grp = 0; grp < groups; ++grp) {
                            double m1 = 0.0, m2 = 0.0;
                            for (int64_t i = 0; i < mid; ++i) {
                                const int64_t base = (n * mid + i) * C + grp * cg;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double dxh = g[base + c] * gp[grp * cg + c];
                                    m1 += dxh;
                                    m2 += dxh * xh[base + c];
                                }
                            }
                            m1 /= static_cast<double>(group_elems);
                            m2 /= static_cast<double>(group_elems);
                            const double is = (*inv_std)[static_cast<size_t>(n * groups + grp)];
                            for (int64_t i = 0; i < mid; ++i) {
                                const int64_t base = (n * mid + i) * C + grp * cg;
                                for (int64_t c = 0; c < cg; ++c) {
                                    const double dxh = g[base + c] * gp[grp * cg + c];
                                    gx[base + c] += is * (dxh - m1 - xh[base + c] * m2);
                                }
                            }
                        }
                });
}

Var avgpool2d_2x(const Var& x) {
    const Shape& s = x->value.shape();
    req(s.size() == 4, "avgpool2d_2x: input must be (N,H,W,C)");
    req(s[1] % 2 == 0 && s[2] % 2 == 0, "avgpool2d_2x: H and W must be even");
    const int64_t N = s[0], H = s[1], W = s[2], C = s[3];
    const int64_t OH = H / 2, OW = W / 2;
    Tensor out({N, OH, OW, C});
    const double* src = x->value.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t oh = 0; oh < OH; ++oh)
            for (int64_t ow = 0; ow < OW; ++ow) {
                double* y = out.data() + ((n * OH + oh) * OW + ow) * C;
                const double* r0 = src + ((n * H + 2 * oh) * W + 2 * ow) * C;
                const double* r1 = src + ((n * H + 2 * oh + 1) * W + 2 * ow) * C;
                for (int64_t c = 0; c < C; ++c)
                    y[c] = 0.25 * (r0[c] + r0[C + c] + r1[c] + r1[C + c]);
            }
    return make(std::move(out), {x}, [x, N, H, W, C, OH, OW](Node& nd) {
        if (!x->requires_grad) return;
        double* gx = x->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t oh = 0; oh < OH; ++oh)
                for (int64_t ow = 0; ow < OW; ++ow) {
                    const double* gr = g + ((n * OH + oh) * OW + ow) * C;
                    double* r0 = gx + ((n * H + 2 * oh) * W + 2 * ow) * C;
                    double* r1 = gx + ((n * H + 2 * oh + 1) * W + 2 * ow) * C;
                    for (int64_t c = 0; c < C; ++c) {
                        const double v = 0.25 * gr[c];
                        r0[c] += v;
                        r0[C + c] += v;
                        r1[c] += v;
                        r1[C + c] += v;
                    }
                }
    });
}

Var upsample_nearest2d_2x(const Var& x) {
    const Shape& s = x->value.shape();
    req(s.size() == 4, "upsample_nearest2d_2x: input must be (N,H,W,C)");
    const int64_t N = s[0], H = s[1], W = s[2], C = s[3];
    Tensor out({N, 2 * H, 2 * W, C});
    const double* src = x->value.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
                const double* v = src + ((n * H + h) * W + w) * C;
                for (int64_t dh = 0; dh < 2; ++dh)
                    for (int64_t dw = 0; dw < 2; ++dw)
                        std::memcpy(out.data() +
                                        ((n * 2 * H + 2 * h + dh) * 2 * W + 2 * w + dw) * C,
                                    v, static_cast<size_t>(C) * sizeof(double));
            }
    return make(std::move(out), {x}, [x, N, H, W, C](Node& nd) {
        if (!x->requires_grad) return;
        double* gx = x->ensure_grad().data();
        const double* g = nd.grad.data();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    double* dst = gx + ((n * H + h) * W + w) * C;
                    for (int64_t dh = 0; dh < 2; ++dh)
                        for (int64_t dw = 0; dw < 2; ++dw) {
                            const double* gr =
                                g + ((n * 2 * H + 2 * h + dh) * 2 * W + 2 * w + dw) * C;
                            for (int64_t c = 0; c < C; ++c) dst[c] += gr[c];
                        }
                }
    });
}

Var mse(const Var& pred, const Var& target) {
    req(pred->value.same_shape(target->value),
        "mse: shape mismatch " + shape_str(pred->value.shape()) + " vs " + shape_str(target->value.shape()));
    Var diff = sub(pred, target);
    return reduce_mean_all(mul(diff, diff));
}

}  // namespace vton::nn
