#pragma once

#include <vector>

#include "foley/errors.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Linear beta ramp with cumulative signal levels used by both training and
// the deterministic sampler.
struct NoiseSchedule {
    int T = 0;
    std::vector<float> beta;
    std::vector<float> alpha;
    std::vector<float> alpha_bar;
};

NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace foley
