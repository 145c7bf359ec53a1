#pragma once

#include <vector>

#include "foley/errors.hpp"
#include "foley/tensor.hpp"

namespace foley {

struct AdamWConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-2f;
};

// Adam with decoupled weight decay. A parameter whose grad buffer was never
// touched this step is treated as having zero gradient.
class AdamW {
  public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    // Validates every populated gradient first and throws NumericError without
    // touching any parameter if one is non-finite.
    void step();
    void zero_grad();

    AdamWConfig& config() { return cfg_; }
    int64_t step_count() const { return t_; }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace foley
