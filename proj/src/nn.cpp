#include "foley/nn.hpp"

#include <cmath>

namespace foley {

Tensor ParamStore::add(const std::string& name, Tensor t) {
    if (has(name)) throw ValueError("parameter registered twice: " + name);
    t.set_requires_grad(true);
    items_.emplace_back(name, t);
    return t;
}

Tensor* ParamStore::find(const std::string& name) {
    for (auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

std::vector<Tensor> ParamStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [n, t] : items_) out.push_back(t);
    return out;
}

void ParamStore::freeze() {
    for (auto& [n, t] : items_) t.set_requires_grad(false);
}

void ParamStore::zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
}

int64_t ParamStore::param_count() const {
    int64_t c = 0;
    for (const auto& [n, t] : items_) c += t.numel();
    return c;
}

bool ParamStore::any_trainable() const {
    for (const auto& [n, t] : items_)
        if (t.requires_grad()) return true;
    return false;
}

void ParamStore::load(const std::vector<std::pair<std::string, Tensor>>& weights) {
    for (auto& [name, t] : items_) {
        const Tensor* src = nullptr;
        for (const auto& [wn, wt] : weights)
            if (wn == name) {
                src = &wt;
                break;
            }
        if (!src)
            throw CheckpointError(CheckpointError::Kind::missing_tensor,
                                  "checkpoint is missing tensor '" + name + "'");
        if (src->shape() != t.shape())
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(src->shape()) + ", model expects " + shape_str(t.shape()));
        std::copy(src->data(), src->data() + src->numel(), t.data());
    }
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, bool bias) {
    Linear l;
    l.w = ps.add(name + ".w",
                 Tensor::randn({in, out}, rng, std::sqrt(1.0f / static_cast<float>(in))));
    if (bias) l.b = ps.add(name + ".b", Tensor::zeros({out}));
    return l;
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

Conv2d make_conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, Rng& rng, bool zero_init) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    const float s = zero_init ? 0.0f : std::sqrt(1.0f / static_cast<float>(cin * k * k));
    c.w = ps.add(name + ".w", zero_init ? Tensor::zeros({cout, cin, k, k})
                                        : Tensor::randn({cout, cin, k, k}, rng, s));
    c.b = ps.add(name + ".b", Tensor::zeros({cout}));
    return c;
}

Tensor Conv1d::operator()(const Tensor& x) const { return conv1d(x, w, b, stride, pad); }

Conv1d make_conv1d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, Rng& rng) {
    Conv1d c;
    c.stride = stride;
    c.pad = pad;
    c.w = ps.add(name + ".w", Tensor::randn({cout, cin, k}, rng,
                                            std::sqrt(1.0f / static_cast<float>(cin * k))));
    c.b = ps.add(name + ".b", Tensor::zeros({cout}));
    return c;
}

Tensor GroupNorm::operator()(const Tensor& x) const {
    return group_norm(x, groups, gamma, beta, 1e-5f);
}

GroupNorm make_group_norm(ParamStore& ps, const std::string& name, int channels, int groups) {
    GroupNorm g;
    g.groups = groups;
    g.gamma = ps.add(name + ".g", Tensor::full({channels}, 1.0f));
    g.beta = ps.add(name + ".b", Tensor::zeros({channels}));
    return g;
}

}  // namespace foley
