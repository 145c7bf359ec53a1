#include "foley/optim.hpp"

#include <cmath>

namespace foley {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::step() {
    for (const auto& p : params_) {
        if (!p.has_grad()) continue;
        for (float g : p.grad())
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient at optimizer step " +
                                   std::to_string(t_ + 1));
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        const bool has_g = p.has_grad();
        const float* g = has_g ? p.grad().data() : nullptr;
        float* w = p.data();
        float* m = m_[pi].data();
        float* v = v_[pi].data();
        for (int64_t i = 0; i < p.numel(); ++i) {
            const float gi = has_g ? g[i] : 0.0f;
            m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
            const float mhat = m[i] / static_cast<float>(bc1);
            const float vhat = v[i] / static_cast<float>(bc2);
            w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
    }
}

}  // namespace foley
