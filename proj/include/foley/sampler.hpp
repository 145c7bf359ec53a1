#pragma once

#include <functional>
#include <vector>

#include "foley/rng.hpp"
#include "foley/schedule.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Predicts the noise component of z_t for a batch sharing one timestep.
using EpsFn = std::function<Tensor(const Tensor& z_t, const std::vector<int>& t)>;

// eps_u + scale * (eps_c - eps_u); scale 0 and 1 return the inputs untouched.
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, float scale);

// Deterministic (eta = 0) sampler over the evenly strided timestep subset
// tau_k = k * T / steps. Each update moves to the previous tau through the
// current clean-sample estimate; the last step returns that estimate itself.
Tensor ddim_sample(const NoiseSchedule& sched, const EpsFn& eps, const Shape& shape, int steps,
                   Rng& rng);

}  // namespace foley
