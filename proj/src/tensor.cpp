#include "foley/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "foley/gemm.hpp"

namespace foley {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {
namespace {
thread_local bool g_grad_enabled = true;
}
bool grad_enabled() { return g_grad_enabled; }
}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

// ---------------------------------------------------------------------------
// TensorT basics
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> TensorT<T>::from(const Shape& s, std::vector<T> data) {
    if (static_cast<int64_t>(data.size()) != shape_numel(s))
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(s));
    TensorT t;
    t.n_ = std::make_shared<detail::Node<T>>();
    t.n_->shape = s;
    t.n_->data = std::move(data);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(const Shape& s) {
    return from(s, std::vector<T>(static_cast<size_t>(shape_numel(s)), T(0)));
}

template <typename T>
TensorT<T> TensorT<T>::full(const Shape& s, T value) {
    return from(s, std::vector<T>(static_cast<size_t>(shape_numel(s)), value));
}

template <typename T>
TensorT<T> TensorT<T>::randn(const Shape& s, Rng& rng, T stddev) {
    std::vector<T> d(static_cast<size_t>(shape_numel(s)));
    for (auto& v : d) v = static_cast<T>(rng.normal()) * stddev;
    return from(s, std::move(d));
}

template <typename T>
TensorT<T> TensorT<T>::uniform(const Shape& s, Rng& rng, T lo, T hi) {
    std::vector<T> d(static_cast<size_t>(shape_numel(s)));
    for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
    return from(s, std::move(d));
}

template <typename T>
T TensorT<T>::item() const {
    if (!defined() || numel() != 1)
        throw ShapeError("item() requires a single-element tensor, got " +
                         (defined() ? shape_str(shape()) : std::string("<null>")));
    return n_->data[0];
}

template <typename T>
bool TensorT<T>::all_finite() const {
    for (const T& v : n_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
TensorT<T> TensorT<T>::detached() const {
    return from(shape(), std::vector<T>(n_->data));
}

template <typename T>
void TensorT<T>::backward() {
    if (!defined() || numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " +
                         (defined() ? shape_str(shape()) : std::string("<null>")));
    if (!n_->requires_grad) return;

    // Post-order DFS so each node runs before all of its parents.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<const void*> visited;
    struct Frame {
        detail::Node<T>* n;
        size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({n_.get(), 0});
    visited.insert(n_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            detail::Node<T>* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    n_->grad_buf()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// tape helper
// ---------------------------------------------------------------------------

namespace {

template <typename T, typename F>
void attach(TensorT<T>& out, const std::vector<TensorT<T>>& parents, F&& fn) {
    if (!detail::grad_enabled()) return;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return;
    auto* n = out.node();
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.handle());
    n->backward_fn = std::forward<F>(fn);
}

// Broadcast strides of `s` against output shape `o` (align right, dim 1
// broadcasts). Returns per-output-dim step in elements.
std::vector<int64_t> bcast_strides(const Shape& s, const Shape& o) {
    std::vector<int64_t> st(o.size(), 0);
    int64_t stride = 1;
    int off = static_cast<int>(o.size()) - static_cast<int>(s.size());
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        if (s[d] != 1) st[d + off] = stride;
        stride *= s[d];
    }
    return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* opname) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        int da = i < a.size() ? a[a.size() - 1 - i] : 1;
        int db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        out[r - 1 - i] = std::max(da, db);
    }
    return out;
}

// Walks every element of `oshape`, producing linear offsets into two
// broadcast operands.
template <typename F>
void bcast_loop(const Shape& oshape, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb,
                F&& f) {
    int64_t total = shape_numel(oshape);
    int r = static_cast<int>(oshape.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (int d = r - 1; d >= 0; --d) {
            idx[d]++;
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < oshape[d]) break;
            oa -= sa[d] * oshape[d];
            ob -= sb[d] * oshape[d];
            idx[d] = 0;
        }
    }
}

template <typename T>
std::vector<T>& gbuf(detail::Node<T>* n) {
    return n->grad_buf();
}

// Shared machinery for add/sub/mul: forward functor plus per-operand
// gradient functors receiving (gout, a_val, b_val).
template <typename T, typename FwdF, typename GaF, typename GbF>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, FwdF fwd, GaF ga_f,
                     GbF gb_f) {
    const bool same = a.shape() == b.shape();
    Shape oshape = same ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
    std::vector<T> od(static_cast<size_t>(shape_numel(oshape)));
    const T* ad = a.data();
    const T* bd = b.data();
    if (same) {
        for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i], bd[i]);
    } else {
        auto sa = bcast_strides(a.shape(), oshape);
        auto sb = bcast_strides(b.shape(), oshape);
        bcast_loop(oshape, sa, sb,
                   [&](int64_t i, int64_t oa, int64_t ob) { od[i] = fwd(ad[oa], bd[ob]); });
    }
    TensorT<T> out = TensorT<T>::from(oshape, std::move(od));
    auto* an = a.node();
    auto* bn = b.node();
    attach(out, {a, b}, [an, bn, same, oshape, ga_f, gb_f](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* ad2 = an->data.data();
        const T* bd2 = bn->data.data();
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        if (same) {
            if (need_a) {
                T* ga = gbuf(an).data();
                for (int64_t i = 0; i < self.numel(); ++i) ga[i] += ga_f(g[i], ad2[i], bd2[i]);
            }
            if (need_b) {
                T* gb = gbuf(bn).data();
                for (int64_t i = 0; i < self.numel(); ++i) gb[i] += gb_f(g[i], ad2[i], bd2[i]);
            }
        } else {
            auto sa = bcast_strides(an->shape, oshape);
            auto sb = bcast_strides(bn->shape, oshape);
            T* ga = need_a ? gbuf(an).data() : nullptr;
            T* gb = need_b ? gbuf(bn).data() : nullptr;
            bcast_loop(oshape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
                if (need_a) ga[oa] += ga_f(g[i], ad2[oa], bd2[ob]);
                if (need_b) gb[ob] += gb_f(g[i], ad2[oa], bd2[ob]);
            });
        }
    });
    return out;
}

template <typename T, typename FwdF, typename BwdF>
TensorT<T> unary_op(const TensorT<T>& a, FwdF fwd, BwdF bwd) {
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const T* ad = a.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i]);
    TensorT<T> out = TensorT<T>::from(a.shape(), std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, bwd](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* x = an->data.data();
        const T* y = self.data.data();
        T* ga = gbuf(an).data();
        for (int64_t i = 0; i < self.numel(); ++i) ga[i] += bwd(g[i], x[i], y[i]);
    });
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x + c; }, [](T g, T, T) { return g; });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x * c; }, [c](T g, T, T) { return g * c; });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

namespace {

// Activations over multi-megabyte feature maps are worth SIMD; Eigen's array
// expressions vectorize exp/tanh where a scalar std::exp loop does not.
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T, typename FwdF, typename BwdF>
TensorT<T> unary_simd(const TensorT<T>& a, FwdF fwd, BwdF bwd) {
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const auto n = static_cast<Eigen::Index>(od.size());
    fwd(CArrMap<T>(a.data(), n), ArrMap<T>(od.data(), n));
    TensorT<T> out = TensorT<T>::from(a.shape(), std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, bwd, n](detail::Node<T>& self) {
        bwd(CArrMap<T>(self.grad.data(), n), CArrMap<T>(an->data.data(), n),
            CArrMap<T>(self.data.data(), n), ArrMap<T>(gbuf(an).data(), n));
    });
    return out;
}

}  // namespace

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
    return unary_simd(
        a, [](auto x, auto y) { y = x / (T(1) + (-x).exp()); },
        [](auto g, auto x, auto, auto ga) {
            auto s = T(1) / (T(1) + (-x).exp());
            ga += g * s * (T(1) + x * (T(1) - s));
        });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    return unary_simd(
        a, [](auto x, auto y) { y = T(1) / (T(1) + (-x).exp()); },
        [](auto g, auto, auto y, auto ga) { ga += g * y * (T(1) - y); });
}

template <typename T>
TensorT<T> tanh_t(const TensorT<T>& a) {
    return unary_simd(
        a, [](auto x, auto y) { y = x.tanh(); },
        [](auto g, auto, auto y, auto ga) { ga += g * (T(1) - y * y); });
}

template <typename T>
TensorT<T> exp_t(const TensorT<T>& a) {
    return unary_simd(
        a, [](auto x, auto y) { y = x.exp(); },
        [](auto g, auto, auto y, auto ga) { ga += g * y; });
}

template <typename T>
TensorT<T> log_t(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
    return unary_op(
        a, [](T x) { return x * x; }, [](T g, T x, T) { return T(2) * g * x; });
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
    return unary_op(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T g, T x, T) { return (x >= lo && x <= hi) ? g : T(0); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    double acc = 0;
    const T* ad = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(ad[i]);
    TensorT<T> out = TensorT<T>::from({}, {static_cast<T>(acc)});
    auto* an = a.node();
    attach(out, {a}, [an](detail::Node<T>& self) {
        T g = self.grad[0];
        T* ga = gbuf(an).data();
        for (int64_t i = 0; i < an->numel(); ++i) ga[i] += g;
    });
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    double acc = 0;
    const T* ad = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(ad[i]);
    TensorT<T> out = TensorT<T>::from({}, {static_cast<T>(acc / static_cast<double>(a.numel()))});
    auto* an = a.node();
    attach(out, {a}, [an](detail::Node<T>& self) {
        T g = self.grad[0] / static_cast<T>(an->numel());
        T* ga = gbuf(an).data();
        for (int64_t i = 0; i < an->numel(); ++i) ga[i] += g;
    });
    return out;
}

namespace {
// Views a shape as [outer, n, inner] around `axis`.
struct AxisView {
    int64_t outer = 1, n = 1, inner = 1;
};
AxisView axis_view(const Shape& s, int axis, const char* opname) {
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError(std::string(opname) + ": axis out of range for shape " + shape_str(s));
    AxisView v;
    for (int d = 0; d < axis; ++d) v.outer *= s[d];
    v.n = s[axis];
    for (size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
    return v;
}
Shape drop_axis(const Shape& s, int axis, bool keepdim) {
    if (axis < 0) axis += static_cast<int>(s.size());
    Shape r;
    for (int d = 0; d < static_cast<int>(s.size()); ++d) {
        if (d == axis) {
            if (keepdim) r.push_back(1);
        } else {
            r.push_back(s[d]);
        }
    }
    return r;
}
}  // namespace

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& a, int axis, bool keepdim) {
    AxisView v = axis_view(a.shape(), axis, "sum_axis");
    std::vector<T> od(static_cast<size_t>(v.outer * v.inner), T(0));
    const T* ad = a.data();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t j = 0; j < v.n; ++j) {
            const T* row = ad + (o * v.n + j) * v.inner;
            T* orow = od.data() + o * v.inner;
            for (int64_t i = 0; i < v.inner; ++i) orow[i] += row[i];
        }
    TensorT<T> out = TensorT<T>::from(drop_axis(a.shape(), axis, keepdim), std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, v](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t j = 0; j < v.n; ++j) {
                T* row = ga + (o * v.n + j) * v.inner;
                const T* grow = g + o * v.inner;
                for (int64_t i = 0; i < v.inner; ++i) row[i] += grow[i];
            }
    });
    return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, int axis, bool keepdim) {
    AxisView v = axis_view(a.shape(), axis, "mean_axis");
    TensorT<T> s = sum_axis(a, axis, keepdim);
    return mul_scalar(s, static_cast<T>(1.0 / static_cast<double>(v.n)));
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    AxisView v = axis_view(a.shape(), axis, "softmax");
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const T* ad = a.data();
    for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t i = 0; i < v.inner; ++i) {
            const int64_t base = o * v.n * v.inner + i;
            T mx = ad[base];
            for (int64_t j = 1; j < v.n; ++j) mx = std::max(mx, ad[base + j * v.inner]);
            double denom = 0;
            for (int64_t j = 0; j < v.n; ++j) {
                T e = std::exp(ad[base + j * v.inner] - mx);
                od[static_cast<size_t>(base + j * v.inner)] = e;
                denom += static_cast<double>(e);
            }
            for (int64_t j = 0; j < v.n; ++j)
                od[static_cast<size_t>(base + j * v.inner)] =
                    static_cast<T>(od[static_cast<size_t>(base + j * v.inner)] / denom);
        }
    TensorT<T> out = TensorT<T>::from(a.shape(), std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, v](detail::Node<T>& self) {
        const T* g = self.grad.data();
        const T* y = self.data.data();
        T* ga = gbuf(an).data();
        for (int64_t o = 0; o < v.outer; ++o)
            for (int64_t i = 0; i < v.inner; ++i) {
                const int64_t base = o * v.n * v.inner + i;
                double dot = 0;
                for (int64_t j = 0; j < v.n; ++j) {
                    int64_t k = base + j * v.inner;
                    dot += static_cast<double>(g[k]) * static_cast<double>(y[k]);
                }
                for (int64_t j = 0; j < v.n; ++j) {
                    int64_t k = base + j * v.inner;
                    ga[k] += y[k] * (g[k] - static_cast<T>(dot));
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& s) {
    if (shape_numel(s) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    TensorT<T> out = TensorT<T>::from(s, std::vector<T>(a.vec()));
    auto* an = a.node();
    attach(out, {a}, [an](detail::Node<T>& self) {
        T* ga = gbuf(an).data();
        const T* g = self.grad.data();
        for (int64_t i = 0; i < self.numel(); ++i) ga[i] += g[i];
    });
    return out;
}

template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2 requires rank >= 2");
    Shape s = a.shape();
    const int rb = s[s.size() - 2], cb = s[s.size() - 1];
    Shape os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    const int64_t batch = a.numel() / (static_cast<int64_t>(rb) * cb);
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const T* ad = a.data();
    for (int64_t b = 0; b < batch; ++b) {
        const T* src = ad + b * rb * cb;
        T* dst = od.data() + b * rb * cb;
        for (int r = 0; r < rb; ++r)
            for (int c = 0; c < cb; ++c) dst[static_cast<int64_t>(c) * rb + r] = src[static_cast<int64_t>(r) * cb + c];
    }
    TensorT<T> out = TensorT<T>::from(os, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, batch, rb, cb](detail::Node<T>& self) {
        T* ga = gbuf(an).data();
        const T* g = self.grad.data();
        for (int64_t b = 0; b < batch; ++b) {
            const T* src = g + b * rb * cb;
            T* dst = ga + b * rb * cb;
            for (int c = 0; c < cb; ++c)
                for (int r = 0; r < rb; ++r) dst[static_cast<int64_t>(r) * cb + c] += src[static_cast<int64_t>(c) * rb + r];
        }
    });
    return out;
}

template <typename T>
TensorT<T> cat(const std::vector<TensorT<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("cat: no inputs");
    Shape base = parts[0].shape();
    if (axis < 0) axis += static_cast<int>(base.size());
    if (axis < 0 || axis >= static_cast<int>(base.size())) throw ShapeError("cat: bad axis");
    int total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != base.size()) throw ShapeError("cat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && s[d] != base[d])
                throw ShapeError("cat: shape mismatch " + shape_str(s) + " vs " + shape_str(base));
        total += s[axis];
    }
    Shape os = base;
    os[axis] = total;
    AxisView v = axis_view(os, axis, "cat");
    std::vector<T> od(static_cast<size_t>(shape_numel(os)));
    std::vector<int> sizes;
    int64_t off = 0;
    for (const auto& p : parts) {
        const int na = p.shape()[axis];
        sizes.push_back(na);
        const T* pd = p.data();
        for (int64_t o = 0; o < v.outer; ++o)
            std::memcpy(od.data() + (o * total + off) * v.inner, pd + o * na * v.inner,
                        sizeof(T) * static_cast<size_t>(na * v.inner));
        off += na;
    }
    TensorT<T> out = TensorT<T>::from(os, std::move(od));
    std::vector<detail::Node<T>*> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    attach(out, parts, [pnodes, sizes, v, total](detail::Node<T>& self) {
        const T* g = self.grad.data();
        int64_t off2 = 0;
        for (size_t pi = 0; pi < pnodes.size(); ++pi) {
            const int na = sizes[pi];
            if (pnodes[pi]->requires_grad) {
                T* ga = gbuf(pnodes[pi]).data();
                for (int64_t o = 0; o < v.outer; ++o) {
                    const T* src = g + (o * total + off2) * v.inner;
                    T* dst = ga + o * na * v.inner;
                    for (int64_t i = 0; i < na * v.inner; ++i) dst[i] += src[i];
                }
            }
            off2 += na;
        }
    });
    return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int end) {
    Shape s = a.shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("slice: bad axis");
    if (start < 0 || end > s[axis] || start >= end)
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) +
                         ") invalid for axis size " + std::to_string(s[axis]));
    AxisView v = axis_view(s, axis, "slice");
    const int na = end - start;
    Shape os = s;
    os[axis] = na;
    std::vector<T> od(static_cast<size_t>(shape_numel(os)));
    const T* ad = a.data();
    for (int64_t o = 0; o < v.outer; ++o)
        std::memcpy(od.data() + o * na * v.inner, ad + (o * v.n + start) * v.inner,
                    sizeof(T) * static_cast<size_t>(na * v.inner));
    TensorT<T> out = TensorT<T>::from(os, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, v, na, start](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int64_t o = 0; o < v.outer; ++o) {
            const T* src = g + o * na * v.inner;
            T* dst = ga + (o * v.n + start) * v.inner;
            for (int64_t i = 0; i < na * v.inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> flatten_spatial(const TensorT<T>& a) {
    if (a.rank() != 4) throw ShapeError("flatten_spatial requires [N,C,H,W]");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    const int P = H * W;
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const T* ad = a.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = ad + (static_cast<int64_t>(n) * C + c) * P;
            for (int p = 0; p < P; ++p)
                od[(static_cast<int64_t>(n) * P + p) * C + c] = src[p];
        }
    TensorT<T> out = TensorT<T>::from({N, P, C}, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, N, C, P](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* dst = ga + (static_cast<int64_t>(n) * C + c) * P;
                for (int p = 0; p < P; ++p)
                    dst[p] += g[(static_cast<int64_t>(n) * P + p) * C + c];
            }
    });
    return out;
}

template <typename T>
TensorT<T> unflatten_spatial(const TensorT<T>& a, int h, int w) {
    if (a.rank() != 3 || a.dim(1) != h * w)
        throw ShapeError("unflatten_spatial: expected [N," + std::to_string(h * w) + ",C], got " +
                         shape_str(a.shape()));
    const int N = a.dim(0), C = a.dim(2);
    const int P = h * w;
    std::vector<T> od(static_cast<size_t>(a.numel()));
    const T* ad = a.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            T* dst = od.data() + (static_cast<int64_t>(n) * C + c) * P;
            for (int p = 0; p < P; ++p)
                dst[p] = ad[(static_cast<int64_t>(n) * P + p) * C + c];
        }
    TensorT<T> out = TensorT<T>::from({N, C, h, w}, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, N, C, P](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* src = g + (static_cast<int64_t>(n) * C + c) * P;
                for (int p = 0; p < P; ++p)
                    ga[(static_cast<int64_t>(n) * P + p) * C + c] += src[p];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const int ra = a.rank(), rb = b.rank();
    if (ra == 2 && rb == 2) {
        const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
        if (k != k2)
            throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
        std::vector<T> od(static_cast<size_t>(m) * n);
        detail::gemm_nn(m, n, k, a.data(), b.data(), od.data());
        TensorT<T> out = TensorT<T>::from({m, n}, std::move(od));
        auto* an = a.node();
        auto* bn = b.node();
        attach(out, {a, b}, [an, bn, m, n, k](detail::Node<T>& self) {
            const T* g = self.grad.data();
            if (an->requires_grad)
                detail::gemm_nt_acc(m, k, n, g, bn->data.data(), gbuf(an).data());
            if (bn->requires_grad)
                detail::gemm_tn_acc(k, n, m, an->data.data(), g, gbuf(bn).data());
        });
        return out;
    }
    if (ra == 3 && rb == 2) {
        const int B = a.dim(0), m = a.dim(1), k = a.dim(2), k2 = b.dim(0), n = b.dim(1);
        if (k != k2)
            throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
        const int M = B * m;
        std::vector<T> od(static_cast<size_t>(M) * n);
        detail::gemm_nn(M, n, k, a.data(), b.data(), od.data());
        TensorT<T> out = TensorT<T>::from({B, m, n}, std::move(od));
        auto* an = a.node();
        auto* bn = b.node();
        attach(out, {a, b}, [an, bn, M, n, k](detail::Node<T>& self) {
            const T* g = self.grad.data();
            if (an->requires_grad)
                detail::gemm_nt_acc(M, k, n, g, bn->data.data(), gbuf(an).data());
            if (bn->requires_grad)
                detail::gemm_tn_acc(k, n, M, an->data.data(), g, gbuf(bn).data());
        });
        return out;
    }
    if (ra == 3 && rb == 3) {
        const int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
        if (b.dim(0) != B || b.dim(1) != k)
            throw ShapeError("matmul: batched shapes disagree, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        std::vector<T> od(static_cast<size_t>(B) * m * n);
        for (int i = 0; i < B; ++i)
            detail::gemm_nn(m, n, k, a.data() + static_cast<int64_t>(i) * m * k,
                            b.data() + static_cast<int64_t>(i) * k * n,
                            od.data() + static_cast<int64_t>(i) * m * n);
        TensorT<T> out = TensorT<T>::from({B, m, n}, std::move(od));
        auto* an = a.node();
        auto* bn = b.node();
        attach(out, {a, b}, [an, bn, B, m, n, k](detail::Node<T>& self) {
            const T* g = self.grad.data();
            for (int i = 0; i < B; ++i) {
                const T* gi = g + static_cast<int64_t>(i) * m * n;
                if (an->requires_grad)
                    detail::gemm_nt_acc(m, k, n, gi, bn->data.data() + static_cast<int64_t>(i) * k * n,
                                        gbuf(an).data() + static_cast<int64_t>(i) * m * k);
                if (bn->requires_grad)
                    detail::gemm_tn_acc(k, n, m, an->data.data() + static_cast<int64_t>(i) * m * k,
                                        gi, gbuf(bn).data() + static_cast<int64_t>(i) * k * n);
            }
        });
        return out;
    }
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
}

template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: want [m,k] x [n,k], got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> od(static_cast<size_t>(m) * n);
    detail::gemm_nt(m, n, k, a.data(), b.data(), od.data());
    TensorT<T> out = TensorT<T>::from({m, n}, std::move(od));
    auto* an = a.node();
    auto* bn = b.node();
    attach(out, {a, b}, [an, bn, m, n, k](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (an->requires_grad) detail::gemm_nn_acc(m, k, n, g, bn->data.data(), gbuf(an).data());
        if (bn->requires_grad) detail::gemm_tn_acc(n, k, m, g, an->data.data(), gbuf(bn).data());
    });
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

// Reusable per-thread buffers for the im2col workspaces; convolutions run
// every training step and per-call heap churn at these sizes dominates the
// GEMM itself. Buffers only ever grow so steady-state calls touch no
// allocator and re-initialize nothing.
template <typename T>
T* conv_scratch(int slot, size_t n) {
    thread_local std::array<std::vector<T>, 5> bufs;
    std::vector<T>& b = bufs[static_cast<size_t>(slot)];
    if (b.size() < n) b.resize(n);
    return b.data();
}

// dst[c,r] = src[r,c]. The matrices conv2d shuffles between NCHW planes and
// GEMM row layout are tall-skinny, so keep the long dimension contiguous on
// one side and a cache-line-sized stride on the other.
template <typename T>
void transpose_mat(const T* src, T* dst, int64_t rows, int64_t cols) {
    if (rows >= cols) {
        for (int64_t c = 0; c < cols; ++c) {
            T* d = dst + c * rows;
            const T* s = src + c;
            for (int64_t r = 0; r < rows; ++r) d[r] = s[r * cols];
        }
    } else {
        for (int64_t r = 0; r < rows; ++r) {
            const T* s = src + r * cols;
            T* d = dst + r;
            for (int64_t c = 0; c < cols; ++c) d[c * rows] = s[c];
        }
    }
}

template <typename T>
void transpose_mat_acc(const T* src, T* dst, int64_t rows, int64_t cols) {
    if (rows >= cols) {
        for (int64_t c = 0; c < cols; ++c) {
            T* d = dst + c * rows;
            const T* s = src + c;
            for (int64_t r = 0; r < rows; ++r) d[r] += s[r * cols];
        }
    } else {
        for (int64_t r = 0; r < rows; ++r) {
            const T* s = src + r * cols;
            T* d = dst + r;
            for (int64_t c = 0; c < cols; ++c) d[c * rows] += s[c];
        }
    }
}

template <typename T>
void im2col(const T* x, int N, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, T* cols) {
    const int ckk = C * kh * kw;
    const int64_t plane_sz = static_cast<int64_t>(H) * W;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        for (int n = 0; n < N; ++n)
            transpose_mat(x + static_cast<int64_t>(n) * C * plane_sz,
                          cols + static_cast<int64_t>(n) * plane_sz * C, C, plane_sz);
        return;
    }
    for (int n = 0; n < N; ++n) {
        const T* xn = x + static_cast<int64_t>(n) * C * plane_sz;
        T* row = cols + static_cast<int64_t>(n) * Ho * Wo * ckk;
        for (int oh = 0; oh < Ho; ++oh) {
            const int ih0 = oh * stride - pad;
            for (int ow = 0; ow < Wo; ++ow, row += ckk) {
                const int iw0 = ow * stride - pad;
                if (ih0 >= 0 && ih0 + kh <= H && iw0 >= 0 && iw0 + kw <= W) {
                    T* r = row;
                    const T* src = xn + static_cast<int64_t>(ih0) * W + iw0;
                    for (int c = 0; c < C; ++c, src += plane_sz) {
                        const T* p = src;
                        for (int i = 0; i < kh; ++i, p += W, r += kw)
                            for (int j = 0; j < kw; ++j) r[j] = p[j];
                    }
                    continue;
                }
                int r = 0;
                for (int c = 0; c < C; ++c) {
                    const T* plane = xn + c * plane_sz;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = ih0 + i;
                        for (int j = 0; j < kw; ++j, ++r) {
                            const int iw = iw0 + j;
                            row[r] = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                         ? plane[static_cast<int64_t>(ih) * W + iw]
                                         : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* cols, int N, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* gx) {
    const int ckk = C * kh * kw;
    const int64_t plane_sz = static_cast<int64_t>(H) * W;
    if (kh == 1 && kw == 1 && stride == 1 && pad == 0) {
        for (int n = 0; n < N; ++n)
            transpose_mat_acc(cols + static_cast<int64_t>(n) * plane_sz * C,
                              gx + static_cast<int64_t>(n) * C * plane_sz, plane_sz, C);
        return;
    }
    for (int n = 0; n < N; ++n) {
        T* gn = gx + static_cast<int64_t>(n) * C * plane_sz;
        const T* row = cols + static_cast<int64_t>(n) * Ho * Wo * ckk;
        for (int oh = 0; oh < Ho; ++oh) {
            const int ih0 = oh * stride - pad;
            for (int ow = 0; ow < Wo; ++ow, row += ckk) {
                const int iw0 = ow * stride - pad;
                if (ih0 >= 0 && ih0 + kh <= H && iw0 >= 0 && iw0 + kw <= W) {
                    const T* r = row;
                    T* dst = gn + static_cast<int64_t>(ih0) * W + iw0;
                    for (int c = 0; c < C; ++c, dst += plane_sz) {
                        T* p = dst;
                        for (int i = 0; i < kh; ++i, p += W, r += kw)
                            for (int j = 0; j < kw; ++j) p[j] += r[j];
                    }
                    continue;
                }
                int r = 0;
                for (int c = 0; c < C; ++c) {
                    T* plane = gn + c * plane_sz;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = ih0 + i;
                        for (int j = 0; j < kw; ++j, ++r) {
                            const int iw = iw0 + j;
                            if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                                plane[static_cast<int64_t>(ih) * W + iw] += row[r];
                        }
                    }
                }
            }
        }
    }
}

// w [Cout,C,kh,kw] -> wmat [C*kh*kw, Cout]
template <typename T>
void pack_weight(const T* w, int Cout, int ckk, T* wmat) {
    transpose_mat(w, wmat, Cout, ckk);
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride,
                  int pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: want x [N,C,H,W], w [Cout,C,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw ShapeError("conv2d: channel mismatch, input has " + std::to_string(C) +
                         ", kernel expects " + std::to_string(w.dim(1)));
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw ValueError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input");
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    const int ckk = C * kh * kw;
    const int64_t M = static_cast<int64_t>(N) * Ho * Wo;
    const bool with_bias = bias.defined();
    if (with_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw ShapeError("conv2d: bias must be [Cout]");

    T* cols = conv_scratch<T>(0, static_cast<size_t>(M * ckk));
    im2col(x.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo, cols);
    T* wmat = conv_scratch<T>(1, static_cast<size_t>(ckk) * Cout);
    pack_weight(w.data(), Cout, ckk, wmat);
    T* rows = conv_scratch<T>(2, static_cast<size_t>(M) * Cout);
    detail::gemm_nn(static_cast<int>(M), Cout, ckk, cols, wmat, rows);

    std::vector<T> od(static_cast<size_t>(N) * Cout * Ho * Wo);
    const int64_t osz = static_cast<int64_t>(Ho) * Wo;
    for (int n = 0; n < N; ++n)
        transpose_mat(rows + static_cast<int64_t>(n) * osz * Cout,
                      od.data() + static_cast<int64_t>(n) * Cout * osz, osz, Cout);
    if (with_bias) {
        const T* bd = bias.data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * Cout; ++nc) {
            T* dst = od.data() + nc * osz;
            const T b = bd[nc % Cout];
            for (int64_t p = 0; p < osz; ++p) dst[p] += b;
        }
    }
    TensorT<T> out = TensorT<T>::from({N, Cout, Ho, Wo}, std::move(od));

    auto* xn = x.node();
    auto* wn = w.node();
    std::vector<TensorT<T>> parents = {x, w};
    if (with_bias) parents.push_back(bias);
    auto* bn = with_bias ? bias.node() : nullptr;
    attach(out, parents,
           [xn, wn, bn, N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo, ckk, M](detail::Node<T>& self) {
               // gather grad into GEMM row layout
               T* grows = conv_scratch<T>(3, static_cast<size_t>(M) * Cout);
               const T* g = self.grad.data();
               const int64_t osz = static_cast<int64_t>(Ho) * Wo;
               for (int n = 0; n < N; ++n)
                   transpose_mat(g + static_cast<int64_t>(n) * Cout * osz,
                                 grows + static_cast<int64_t>(n) * osz * Cout, Cout, osz);
               if (bn && bn->requires_grad) {
                   T* gb = gbuf(bn).data();
                   for (int64_t nc = 0; nc < static_cast<int64_t>(N) * Cout; ++nc) {
                       const T* src = g + nc * osz;
                       T acc = T(0);
                       for (int64_t p = 0; p < osz; ++p) acc += src[p];
                       gb[nc % Cout] += acc;
                   }
               }
               if (wn->requires_grad) {
                   // recompute cols; dwmat = cols^T * grows
                   T* cols2 = conv_scratch<T>(0, static_cast<size_t>(M * ckk));
                   im2col(xn->data.data(), N, C, H, W, kh, kw, stride, pad, Ho, Wo, cols2);
                   T* dwmat = conv_scratch<T>(1, static_cast<size_t>(ckk) * Cout);
                   detail::gemm_tn(ckk, Cout, static_cast<int>(M), cols2, grows, dwmat);
                   transpose_mat_acc(dwmat, gbuf(wn).data(), ckk, Cout);
               }
               if (xn->requires_grad) {
                   T* wmat2 = conv_scratch<T>(1, static_cast<size_t>(ckk) * Cout);
                   pack_weight(wn->data.data(), Cout, ckk, wmat2);
                   T* dcols = conv_scratch<T>(0, static_cast<size_t>(M * ckk));
                   detail::gemm_nt(static_cast<int>(M), ckk, Cout, grows, wmat2, dcols);
                   col2im_acc(dcols, N, C, H, W, kh, kw, stride, pad, Ho, Wo, gbuf(xn).data());
               }
           });
    return out;
}

template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, int stride,
                  int pad) {
    if (x.rank() != 3 || w.rank() != 3)
        throw ShapeError("conv1d: want x [N,C,L], w [Cout,C,k], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    // conv2d pads both axes, so pad the length axis explicitly and run unpadded.
    TensorT<T> xp = x;
    if (pad > 0) {
        TensorT<T> zpad = TensorT<T>::zeros({x.dim(0), x.dim(1), pad});
        xp = cat<T>({zpad, x, zpad}, 2);
    }
    TensorT<T> x4 = reshape(xp, {xp.dim(0), xp.dim(1), 1, xp.dim(2)});
    TensorT<T> w4 = reshape(w, {w.dim(0), w.dim(1), 1, w.dim(2)});
    TensorT<T> y = conv2d(x4, w4, bias, stride, 0);
    return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& a) {
    if (a.rank() != 4) throw ShapeError("upsample_nearest2x requires [N,C,H,W]");
    const int N = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    std::vector<T> od(static_cast<size_t>(a.numel()) * 4);
    const T* ad = a.data();
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
        const T* src = ad + nc * H * W;
        T* dst = od.data() + nc * H * W * 4;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const T v = src[static_cast<int64_t>(h) * W + w];
                T* q = dst + (static_cast<int64_t>(2 * h) * 2 * W + 2 * w);
                q[0] = v;
                q[1] = v;
                q[2 * W] = v;
                q[2 * W + 1] = v;
            }
    }
    TensorT<T> out = TensorT<T>::from({N, C, 2 * H, 2 * W}, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, N, C, H, W](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
            const T* src = g + nc * H * W * 4;
            T* dst = ga + nc * H * W;
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const T* q = src + (static_cast<int64_t>(2 * h) * 2 * W + 2 * w);
                    dst[static_cast<int64_t>(h) * W + w] += q[0] + q[1] + q[2 * W] + q[2 * W + 1];
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// gather / embedding / norm
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be [V,D]");
    const int V = table.dim(0), D = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V)
            throw ValueError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(V) + ")");
    const int L = static_cast<int>(ids.size());
    std::vector<T> od(static_cast<size_t>(L) * D);
    const T* td = table.data();
    for (int l = 0; l < L; ++l)
        std::memcpy(od.data() + static_cast<int64_t>(l) * D, td + static_cast<int64_t>(ids[l]) * D,
                    sizeof(T) * static_cast<size_t>(D));
    TensorT<T> out = TensorT<T>::from({L, D}, std::move(od));
    auto* tn = table.node();
    attach(out, {table}, [tn, ids, D](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* gt = gbuf(tn).data();
        for (size_t l = 0; l < ids.size(); ++l) {
            T* dst = gt + static_cast<int64_t>(ids[l]) * D;
            const T* src = g + static_cast<int64_t>(l) * D;
            for (int d = 0; d < D; ++d) dst[d] += src[d];
        }
    });
    return out;
}

template <typename T>
TensorT<T> gather_lastdim(const TensorT<T>& a, const std::vector<int>& idx) {
    if (a.rank() < 1) throw ShapeError("gather_lastdim: rank >= 1 required");
    const int L = a.dim(a.rank() - 1);
    for (int i : idx)
        if (i < 0 || i >= L) throw ValueError("gather_lastdim: index out of range");
    const int M = static_cast<int>(idx.size());
    const int64_t outer = a.numel() / L;
    Shape os = a.shape();
    os.back() = M;
    std::vector<T> od(static_cast<size_t>(outer) * M);
    const T* ad = a.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int i = 0; i < M; ++i) od[o * M + i] = ad[o * L + idx[i]];
    TensorT<T> out = TensorT<T>::from(os, std::move(od));
    auto* an = a.node();
    attach(out, {a}, [an, idx, L, M, outer](detail::Node<T>& self) {
        const T* g = self.grad.data();
        T* ga = gbuf(an).data();
        for (int64_t o = 0; o < outer; ++o)
            for (int i = 0; i < M; ++i) ga[o * L + idx[i]] += g[o * M + i];
    });
    return out;
}

template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps) {
    if (x.rank() != 4 && x.rank() != 3) throw ShapeError("group_norm: want [N,C,H,W] or [N,C,L]");
    const int N = x.dim(0), C = x.dim(1);
    const int64_t spatial = x.numel() / (static_cast<int64_t>(N) * C);
    if (C % groups != 0) throw ValueError("group_norm: channels not divisible by groups");
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("group_norm: gamma/beta must have C elements");
    const int cpg = C / groups;
    const int64_t m = cpg * spatial;  // elements per (sample, group)

    std::vector<T> od(static_cast<size_t>(x.numel()));
    std::vector<T> mu(static_cast<size_t>(N) * groups), istd(static_cast<size_t>(N) * groups);
    const T* xd = x.data();
    const T* gd = gamma.data();
    const T* bd = beta.data();
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const int64_t base = (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cpg) * spatial;
            double s = 0, s2 = 0;
            for (int64_t i = 0; i < m; ++i) {
                double v = xd[base + i];
                s += v;
                s2 += v * v;
            }
            const double mean_v = s / static_cast<double>(m);
            const double var_v = std::max(0.0, s2 / static_cast<double>(m) - mean_v * mean_v);
            const double is = 1.0 / std::sqrt(var_v + static_cast<double>(eps));
            mu[static_cast<size_t>(n) * groups + g] = static_cast<T>(mean_v);
            istd[static_cast<size_t>(n) * groups + g] = static_cast<T>(is);
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                const int64_t cb = base + static_cast<int64_t>(c) * spatial;
                for (int64_t i = 0; i < spatial; ++i) {
                    const T xh = static_cast<T>((xd[cb + i] - mean_v) * is);
                    od[static_cast<size_t>(cb + i)] = xh * gd[ch] + bd[ch];
                }
            }
        }
    TensorT<T> out = TensorT<T>::from(x.shape(), std::move(od));
    auto* xn = x.node();
    auto* gn = gamma.node();
    auto* bn = beta.node();
    attach(out, {x, gamma, beta},
           [xn, gn, bn, N, C, groups, cpg, spatial, m, mu, istd](detail::Node<T>& self) {
               const T* g = self.grad.data();
               const T* xd2 = xn->data.data();
               const T* gd2 = gn->data.data();
               T* gx = xn->requires_grad ? gbuf(xn).data() : nullptr;
               T* gg = gn->requires_grad ? gbuf(gn).data() : nullptr;
               T* gb = bn->requires_grad ? gbuf(bn).data() : nullptr;
               for (int n = 0; n < N; ++n)
                   for (int gr = 0; gr < groups; ++gr) {
                       const int64_t base = (static_cast<int64_t>(n) * C + static_cast<int64_t>(gr) * cpg) * spatial;
                       const double mean_v = mu[static_cast<size_t>(n) * groups + gr];
                       const double is = istd[static_cast<size_t>(n) * groups + gr];
                       double sum_dxh = 0, sum_dxh_xh = 0;
                       for (int c = 0; c < cpg; ++c) {
                           const int ch = gr * cpg + c;
                           const int64_t cb = base + static_cast<int64_t>(c) * spatial;
                           for (int64_t i = 0; i < spatial; ++i) {
                               const double xh = (xd2[cb + i] - mean_v) * is;
                               const double dxh = static_cast<double>(g[cb + i]) * gd2[ch];
                               sum_dxh += dxh;
                               sum_dxh_xh += dxh * xh;
                               if (gg) gg[ch] += static_cast<T>(g[cb + i] * xh);
                               if (gb) gb[ch] += g[cb + i];
                           }
                       }
                       if (gx) {
                           const double inv_m = 1.0 / static_cast<double>(m);
                           for (int c = 0; c < cpg; ++c) {
                               const int ch = gr * cpg + c;
                               const int64_t cb = base + static_cast<int64_t>(c) * spatial;
                               for (int64_t i = 0; i < spatial; ++i) {
                                   const double xh = (xd2[cb + i] - mean_v) * is;
                                   const double dxh = static_cast<double>(g[cb + i]) * gd2[ch];
                                   gx[cb + i] += static_cast<T>(
                                       is * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh));
                               }
                           }
                       }
                   }
           });
    return out;
}

// ---------------------------------------------------------------------------
// explicit instantiation
// ---------------------------------------------------------------------------

template class TensorT<float>;
template class TensorT<double>;

#define FOLEY_INSTANTIATE_OPS(T)                                                              \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                            \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                                     \
    template TensorT<T> mul_scalar(const TensorT<T>&, T);                                     \
    template TensorT<T> relu(const TensorT<T>&);                                              \
    template TensorT<T> silu(const TensorT<T>&);                                              \
    template TensorT<T> sigmoid(const TensorT<T>&);                                           \
    template TensorT<T> tanh_t(const TensorT<T>&);                                            \
    template TensorT<T> exp_t(const TensorT<T>&);                                             \
    template TensorT<T> log_t(const TensorT<T>&);                                             \
    template TensorT<T> square(const TensorT<T>&);                                            \
    template TensorT<T> clamp(const TensorT<T>&, T, T);                                       \
    template TensorT<T> sum(const TensorT<T>&);                                               \
    template TensorT<T> mean(const TensorT<T>&);                                              \
    template TensorT<T> sum_axis(const TensorT<T>&, int, bool);                               \
    template TensorT<T> mean_axis(const TensorT<T>&, int, bool);                              \
    template TensorT<T> softmax(const TensorT<T>&, int);                                      \
    template TensorT<T> reshape(const TensorT<T>&, const Shape&);                             \
    template TensorT<T> transpose_last2(const TensorT<T>&);                                   \
    template TensorT<T> cat(const std::vector<TensorT<T>>&, int);                             \
    template TensorT<T> slice(const TensorT<T>&, int, int, int);                              \
    template TensorT<T> flatten_spatial(const TensorT<T>&);                                   \
    template TensorT<T> unflatten_spatial(const TensorT<T>&, int, int);                       \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);                         \
    template TensorT<T> matmul_nt(const TensorT<T>&, const TensorT<T>&);                      \
    template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,  \
                               int);                                                          \
    template TensorT<T> conv1d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int,  \
                               int);                                                          \
    template TensorT<T> upsample_nearest2x(const TensorT<T>&);                                \
    template TensorT<T> embedding(const TensorT<T>&, const std::vector<int>&);                \
    template TensorT<T> gather_lastdim(const TensorT<T>&, const std::vector<int>&);           \
    template TensorT<T> group_norm(const TensorT<T>&, int, const TensorT<T>&,                 \
                                   const TensorT<T>&, T);

FOLEY_INSTANTIATE_OPS(float)
FOLEY_INSTANTIATE_OPS(double)

}  // namespace foley
