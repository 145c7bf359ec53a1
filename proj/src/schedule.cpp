#include "foley/schedule.hpp"

#include <cmath>

namespace foley {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ValueError("schedule needs at least 2 steps");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw ValueError("schedule requires 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double b =
            beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta[static_cast<size_t>(t)] = static_cast<float>(b);
        s.alpha[static_cast<size_t>(t)] = static_cast<float>(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = static_cast<float>(prod);
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (t < 0 || t >= s.T)
        throw ValueError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.T) +
                         ")");
    if (z0.shape() != eps.shape())
        throw ShapeError("noise shape " + shape_str(eps.shape()) + " does not match signal " +
                         shape_str(z0.shape()));
    const float ab = s.alpha_bar[static_cast<size_t>(t)];
    const float sa = std::sqrt(ab);
    const float sn = std::sqrt(1.0f - ab);
    return add(mul_scalar(z0, sa), mul_scalar(eps, sn));
}

}  // namespace foley
