#include "foley/sampler.hpp"

#include <cmath>
#include <string>

namespace foley {

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float scale) {
    if (scale == 0.0f) return eps_uncond;
    if (scale == 1.0f) return eps_cond;
    if (eps_uncond.shape() != eps_cond.shape())
        throw ShapeError("guidance branches disagree: " + shape_str(eps_uncond.shape()) +
                         " vs " + shape_str(eps_cond.shape()));
    return add(eps_uncond, mul_scalar(sub(eps_cond, eps_uncond), scale));
}

Tensor ddim_sample(const NoiseSchedule& sched, const EpsFn& eps, const Shape& shape, int steps,
                   Rng& rng) {
    if (steps < 1) throw ValueError("sampler needs at least one step, got " + std::to_string(steps));
    if (steps > sched.T)
        throw ValueError("sampler steps " + std::to_string(steps) + " exceed schedule length " +
                         std::to_string(sched.T));
    if (shape.empty()) throw ShapeError("sample shape must have a batch dimension");
    NoGradGuard ng;

    std::vector<int> tau(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k)
        tau[static_cast<size_t>(k)] = static_cast<int>(static_cast<int64_t>(k) * sched.T / steps);

    Tensor z = Tensor::randn(shape, rng);
    const int n = shape[0];
    for (int k = steps - 1; k >= 0; --k) {
        const int t = tau[static_cast<size_t>(k)];
        Tensor e = eps(z, std::vector<int>(static_cast<size_t>(n), t));
        if (e.shape() != z.shape())
            throw ShapeError("noise prediction shape " + shape_str(e.shape()) +
                             " does not match state " + shape_str(z.shape()));
        const double ab = sched.alpha_bar[static_cast<size_t>(t)];
        Tensor x0 = mul_scalar(sub(z, mul_scalar(e, static_cast<float>(std::sqrt(1.0 - ab)))),
                               static_cast<float>(1.0 / std::sqrt(ab)));
        if (k == 0) {
            z = x0;
        } else {
            const double abp = sched.alpha_bar[static_cast<size_t>(tau[static_cast<size_t>(k - 1)])];
            z = add(mul_scalar(x0, static_cast<float>(std::sqrt(abp))),
                    mul_scalar(e, static_cast<float>(std::sqrt(1.0 - abp))));
        }
    }
    return z;
}

}  // namespace foley
