#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace vton {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Dense row-major double tensor. Video data uses the fixed axis order
// (batch, time, height, width, channels); T == 1 denotes an image batch.
// Pixel-valued tensors live in [-1, 1]; feature tensors are unbounded.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}
    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (int64_t(data_.size()) != checked_numel(shape_))
            throw InvalidArgument("tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor randn(Shape shape, Rng& rng) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = rng.normal();
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    int64_t ndim() const { return int64_t(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[size_t(i)]; }
    int64_t numel() const { return int64_t(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[size_t(i)]; }
    double operator[](int64_t i) const { return data_[size_t(i)]; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    // 5-D accessor for (B, T, H, W, C) tensors.
    double& at5(int64_t b, int64_t t, int64_t h, int64_t w, int64_t c) {
        return data_[size_t((((b * shape_[1] + t) * shape_[2] + h) * shape_[3] + w) * shape_[4] + c)];
    }
    double at5(int64_t b, int64_t t, int64_t h, int64_t w, int64_t c) const {
        return data_[size_t((((b * shape_[1] + t) * shape_[2] + h) * shape_[3] + w) * shape_[4] + c)];
    }

    Tensor reshaped(Shape new_shape) const {
        if (checked_numel(new_shape) != numel())
            throw InvalidArgument("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape) +
                                  " changes element count");
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static int64_t checked_numel(const Shape& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw InvalidArgument("negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Video tensors are plain Tensors with 5 axes; these helpers centralize the
// axis conventions so callers never index by magic numbers.
namespace video {
inline void check(const Tensor& t, const char* who) {
    if (t.ndim() != 5) throw InvalidArgument(std::string(who) + ": expected a 5-D (B,T,H,W,C) tensor, got " + shape_str(t.shape()));
    for (int i = 0; i < 5; ++i)
        if (t.dim(i) < 1) throw InvalidArgument(std::string(who) + ": all axis lengths must be >= 1, got " + shape_str(t.shape()));
}
inline int64_t batch(const Tensor& t) { return t.dim(0); }
inline int64_t frames(const Tensor& t) { return t.dim(1); }
inline int64_t height(const Tensor& t) { return t.dim(2); }
inline int64_t width(const Tensor& t) { return t.dim(3); }
inline int64_t channels(const Tensor& t) { return t.dim(4); }
}  // namespace video

}  // namespace vton
