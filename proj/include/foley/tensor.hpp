#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "foley/errors.hpp"
#include "foley/rng.hpp"

namespace foley {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    std::vector<T>& grad_buf() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

bool grad_enabled();

}  // namespace detail

// Disables tape recording in scope. Used for inference and frozen evaluation
// so long op chains do not retain their activation history.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense n-dimensional array of T with optional gradient, node in a dynamic
// reverse-mode tape. Copies are shallow (shared node). Data is immutable by
// convention once created; only the optimizer writes in place.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(const Shape& s);
    static TensorT full(const Shape& s, T value);
    static TensorT scalar(T value) { return full({}, value); }
    static TensorT from(const Shape& s, std::vector<T> data);
    static TensorT randn(const Shape& s, Rng& rng, T stddev = T(1));
    static TensorT uniform(const Shape& s, Rng& rng, T lo, T hi);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return n_->numel(); }

    T* data() { return n_->data.data(); }
    const T* data() const { return n_->data.data(); }
    std::vector<T>& vec() { return n_->data; }
    const std::vector<T>& vec() const { return n_->data; }

    // Scalar extraction; shape may be {} or {1}.
    T item() const;

    bool requires_grad() const { return n_->requires_grad; }
    TensorT& set_requires_grad(bool b) {
        n_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    // Gradient buffer; zeros if backward never reached this tensor.
    const std::vector<T>& grad() const { return n_->grad_buf(); }
    std::vector<T>& grad_buf() { return n_->grad_buf(); }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    bool all_finite() const;

    // Reverse pass from a scalar. Accumulates into .grad of every reachable
    // tensor with requires_grad set.
    void backward();

    // Drops tape linkage so this value is treated as a constant downstream.
    TensorT detached() const;

    detail::Node<T>* node() const { return n_.get(); }
    const std::shared_ptr<detail::Node<T>>& handle() const { return n_; }

private:
    std::shared_ptr<detail::Node<T>> n_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// ---- elementwise (broadcasting, numpy align-right rules) ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T c);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T c);
template <typename T> TensorT<T> neg(const TensorT<T>& a) { return mul_scalar(a, T(-1)); }

// ---- unary ----
template <typename T> TensorT<T> relu(const TensorT<T>& a);
template <typename T> TensorT<T> silu(const TensorT<T>& a);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& a);
template <typename T> TensorT<T> tanh_t(const TensorT<T>& a);
template <typename T> TensorT<T> exp_t(const TensorT<T>& a);
template <typename T> TensorT<T> log_t(const TensorT<T>& a);
template <typename T> TensorT<T> square(const TensorT<T>& a);
template <typename T> TensorT<T> clamp(const TensorT<T>& a, T lo, T hi);

// ---- reductions ----
template <typename T> TensorT<T> sum(const TensorT<T>& a);
template <typename T> TensorT<T> mean(const TensorT<T>& a);
template <typename T> TensorT<T> sum_axis(const TensorT<T>& a, int axis, bool keepdim = false);
template <typename T> TensorT<T> mean_axis(const TensorT<T>& a, int axis, bool keepdim = false);
template <typename T> TensorT<T> softmax(const TensorT<T>& a, int axis);

// ---- shape ----
template <typename T> TensorT<T> reshape(const TensorT<T>& a, const Shape& s);
template <typename T> TensorT<T> transpose_last2(const TensorT<T>& a);
template <typename T> TensorT<T> cat(const std::vector<TensorT<T>>& parts, int axis);
template <typename T> TensorT<T> slice(const TensorT<T>& a, int axis, int start, int end);

// [N,C,H,W] -> [N, H*W, C] and back.
template <typename T> TensorT<T> flatten_spatial(const TensorT<T>& a);
template <typename T> TensorT<T> unflatten_spatial(const TensorT<T>& a, int h, int w);

// ---- linear algebra ----
// 2D x 2D, 3D x 3D (batched), or 3D x 2D (shared right operand).
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// a[m,k] x b[n,k]^T -> [m,n]
template <typename T> TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b);

// ---- convolution (NCHW, cross-correlation) ----
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride,
                  int pad);
// x [N,C,L], w [Cout,Cin,k]
template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride,
                  int pad);

template <typename T> TensorT<T> upsample_nearest2x(const TensorT<T>& a);

// ---- misc ----
template <typename T> TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& ids);
template <typename T> TensorT<T> gather_lastdim(const TensorT<T>& a, const std::vector<int>& idx);
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps = T(1e-5));

// ---- composites ----
template <typename T> TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    return mean(square(sub(a, b)));
}

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace foley
