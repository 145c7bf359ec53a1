#pragma once

#include <string>
#include <utility>
#include <vector>

#include "foley/errors.hpp"
#include "foley/rng.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Ordered name -> tensor registry backing a model. Registered tensors are
// trainable by default; freeze() flips the whole store to inference-only.
class ParamStore {
  public:
    Tensor add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    bool has(const std::string& name) const { return find(name) != nullptr; }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;

    void freeze();
    void zero_grads();
    int64_t param_count() const;
    bool any_trainable() const;

    // Copies checkpoint data into registered tensors by name. Every registered
    // tensor must be present with a matching shape.
    void load(const std::vector<std::pair<std::string, Tensor>>& weights);

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out] or undefined
    Tensor operator()(const Tensor& x) const;
};
Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
                   bool bias = true);

struct Conv2d {
    Tensor w;  // [cout, cin, k, k]
    Tensor b;
    int stride = 1;
    int pad = 0;
    Tensor operator()(const Tensor& x) const;
};
Conv2d make_conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, Rng& rng, bool zero_init = false);

struct Conv1d {
    Tensor w;  // [cout, cin, k]
    Tensor b;
    int stride = 1;
    int pad = 0;
    Tensor operator()(const Tensor& x) const;
};
Conv1d make_conv1d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, Rng& rng);

struct GroupNorm {
    Tensor gamma;
    Tensor beta;
    int groups = 8;
    Tensor operator()(const Tensor& x) const;
};
GroupNorm make_group_norm(ParamStore& ps, const std::string& name, int channels, int groups);

}  // namespace foley
