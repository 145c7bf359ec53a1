#pragma once

// Central finite-difference validation of the reverse-mode tape, run in
// double so truncation error stays far below the pass threshold.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "foley/rng.hpp"
#include "foley/tensor.hpp"

namespace gradcheck {

using foley::DTensor;
using foley::Rng;
using foley::Shape;

using Fn = std::function<DTensor(const std::vector<DTensor>&)>;

struct Report {
    int trials = 0;
    int coords = 0;
    double max_rel = 0.0;
    std::string worst;  // "<trial>: input i coord j analytic a numeric n"
};

inline double rel_err(double a, double b) {
    const double denom = std::max({1e-6, std::abs(a), std::abs(b)});
    return std::abs(a - b) / denom;
}

// Checks d(scalar f)/d(input) for every coordinate of every input against
// central differences, where f contracts the trial op's output through random
// weights drawn once so every evaluation sees the same function. Inputs are
// perturbed in place; f rebuilds its graph on each call.
inline void check_one(const std::string& label, std::vector<DTensor> inputs, const Fn& g,
                      Rng& rng, Report& rep, double h = 1e-6) {
    DTensor w;
    bool have_w = false;
    auto f = [&](const std::vector<DTensor>& v) {
        DTensor out = g(v);
        if (!have_w) {
            w = DTensor::randn(out.shape(), rng).detached();
            have_w = true;
        }
        return foley::sum(foley::mul(out, w));
    };
    for (auto& in : inputs) in.set_requires_grad(true);
    DTensor y = f(inputs);
    y.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    foley::NoGradGuard ng;
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        DTensor& in = inputs[ii];
        for (int64_t j = 0; j < in.numel(); ++j) {
            const double orig = in.data()[j];
            const double step = h * std::max(1.0, std::abs(orig));
            in.data()[j] = orig + step;
            const double fp = f(inputs).item();
            in.data()[j] = orig - step;
            const double fm = f(inputs).item();
            in.data()[j] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double e = rel_err(analytic[ii][static_cast<size_t>(j)], numeric);
            ++rep.coords;
            if (e > rep.max_rel) {
                rep.max_rel = e;
                rep.worst = label + ": input " + std::to_string(ii) + " coord " +
                            std::to_string(j) + " analytic " +
                            std::to_string(analytic[ii][static_cast<size_t>(j)]) + " numeric " +
                            std::to_string(numeric);
            }
        }
    }
    ++rep.trials;
}

// Randomized trials covering the op set the models are built from. Returns
// the aggregate report; callers assert trials >= wanted and max_rel below
// threshold.
inline Report run_op_trials(uint64_t seed, int repeats = 4) {
    Report rep;
    for (int r = 0; r < repeats; ++r) {
        Rng rng(seed + static_cast<uint64_t>(r) * 1000003ULL);
        auto randn = [&](const Shape& s) { return DTensor::randn(s, rng); };
        // inputs kept away from relu/clamp kinks
        auto spread = [&](const Shape& s, double margin) {
            DTensor t = DTensor::randn(s, rng);
            for (int64_t i = 0; i < t.numel(); ++i) {
                double& v = t.data()[i];
                if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
            }
            return t;
        };
        auto positive = [&](const Shape& s) {
            DTensor t = DTensor::randn(s, rng);
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.3 + std::abs(t.data()[i]);
            return t;
        };

        check_one("add", {randn({2, 3}), randn({2, 3})}, [&](auto& v) {
            return foley::add(v[0], v[1]);
        }, rng, rep);
        check_one("add_broadcast", {randn({2, 3, 4}), randn({4})}, [&](auto& v) {
            return foley::add(v[0], v[1]);
        }, rng, rep);
        check_one("sub_broadcast", {randn({2, 1, 4}), randn({3, 1})}, [&](auto& v) {
            return foley::sub(v[0], v[1]);
        }, rng, rep);
        check_one("mul_broadcast", {randn({2, 3}), randn({2, 1})}, [&](auto& v) {
            return foley::mul(v[0], v[1]);
        }, rng, rep);
        check_one("add_scalar", {randn({5})}, [&](auto& v) {
            return foley::add_scalar(v[0], 1.7);
        }, rng, rep);
        check_one("mul_scalar", {randn({5})}, [&](auto& v) {
            return foley::mul_scalar(v[0], -2.3);
        }, rng, rep);
        check_one("relu", {spread({3, 4}, 0.05)}, [&](auto& v) {
            return foley::relu(v[0]);
        }, rng, rep);
        check_one("silu", {randn({3, 4})}, [&](auto& v) {
            return foley::silu(v[0]);
        }, rng, rep);
        check_one("sigmoid", {randn({3, 4})}, [&](auto& v) {
            return foley::sigmoid(v[0]);
        }, rng, rep);
        check_one("tanh", {randn({3, 4})}, [&](auto& v) {
            return foley::tanh_t(v[0]);
        }, rng, rep);
        check_one("exp", {randn({3, 4})}, [&](auto& v) {
            return foley::exp_t(v[0]);
        }, rng, rep);
        check_one("log", {positive({3, 4})}, [&](auto& v) {
            return foley::log_t(v[0]);
        }, rng, rep);
        check_one("square", {randn({3, 4})}, [&](auto& v) {
            return foley::square(v[0]);
        }, rng, rep);
        check_one("clamp", {spread({3, 4}, 0.1)}, [&](auto& v) {
            return foley::clamp(v[0], -0.9, 0.9);
        }, rng, rep);
        check_one("sum", {randn({2, 5})}, [&](auto& v) { return foley::sum(v[0]); }, rng, rep);
        check_one("mean", {randn({2, 5})}, [&](auto& v) { return foley::mean(v[0]); }, rng, rep);
        check_one("sum_axis", {randn({2, 3, 4})}, [&](auto& v) {
            return foley::sum_axis(v[0], 1);
        }, rng, rep);
        check_one("sum_axis_keep", {randn({2, 3, 4})}, [&](auto& v) {
            return foley::sum_axis(v[0], 2, true);
        }, rng, rep);
        check_one("mean_axis", {randn({2, 3, 4})}, [&](auto& v) {
            return foley::mean_axis(v[0], 0);
        }, rng, rep);
        check_one("softmax", {randn({3, 5})}, [&](auto& v) {
            return foley::softmax(v[0], 1);
        }, rng, rep);
        check_one("softmax_axis0", {randn({3, 5})}, [&](auto& v) {
            return foley::softmax(v[0], 0);
        }, rng, rep);
        check_one("reshape", {randn({2, 6})}, [&](auto& v) {
            return foley::reshape(v[0], {3, 4});
        }, rng, rep);
        check_one("transpose_last2", {randn({2, 3, 4})}, [&](auto& v) {
            return foley::transpose_last2(v[0]);
        }, rng, rep);
        check_one("cat", {randn({2, 3}), randn({2, 2})}, [&](auto& v) {
            return foley::cat<double>({v[0], v[1]}, 1);
        }, rng, rep);
        check_one("slice", {randn({2, 6})}, [&](auto& v) {
            return foley::slice(v[0], 1, 1, 4);
        }, rng, rep);
        check_one("flatten_spatial", {randn({2, 3, 2, 4})}, [&](auto& v) {
            return foley::flatten_spatial(v[0]);
        }, rng, rep);
        check_one("unflatten_spatial", {randn({2, 8, 3})}, [&](auto& v) {
            return foley::unflatten_spatial(v[0], 2, 4);
        }, rng, rep);
        check_one("matmul2d", {randn({3, 4}), randn({4, 2})}, [&](auto& v) {
            return foley::matmul(v[0], v[1]);
        }, rng, rep);
        check_one("matmul3d", {randn({2, 3, 4}), randn({2, 4, 2})}, [&](auto& v) {
            return foley::matmul(v[0], v[1]);
        }, rng, rep);
        check_one("matmul3d2d", {randn({2, 3, 4}), randn({4, 2})}, [&](auto& v) {
            return foley::matmul(v[0], v[1]);
        }, rng, rep);
        check_one("matmul_nt", {randn({3, 4}), randn({5, 4})}, [&](auto& v) {
            return foley::matmul_nt(v[0], v[1]);
        }, rng, rep);
        check_one("conv2d_s1p1", {randn({2, 3, 4, 5}), randn({4, 3, 3, 3}), randn({4})},
                  [&](auto& v) {
                      return foley::conv2d(v[0], v[1], v[2], 1, 1);
                  }, rng, rep);
        check_one("conv2d_s2p1", {randn({1, 2, 4, 6}), randn({3, 2, 3, 3}), randn({3})},
                  [&](auto& v) {
                      return foley::conv2d(v[0], v[1], v[2], 2, 1);
                  }, rng, rep);
        check_one("conv2d_1x1", {randn({2, 3, 4, 4}), randn({2, 3, 1, 1}), randn({2})},
                  [&](auto& v) {
                      return foley::conv2d(v[0], v[1], v[2], 1, 0);
                  }, rng, rep);
        check_one("conv2d_nobias", {randn({1, 2, 5, 5}), randn({2, 2, 3, 3})}, [&](auto& v) {
            return foley::conv2d(v[0], v[1], DTensor(), 1, 1);
        }, rng, rep);
        check_one("conv1d", {randn({2, 3, 8}), randn({4, 3, 5}), randn({4})}, [&](auto& v) {
            return foley::conv1d(v[0], v[1], v[2], 1, 2);
        }, rng, rep);
        check_one("upsample2x", {randn({2, 2, 3, 4})}, [&](auto& v) {
            return foley::upsample_nearest2x(v[0]);
        }, rng, rep);
        check_one("embedding", {randn({6, 3})}, [&](auto& v) {
            return foley::embedding(v[0], {0, 2, 5, 2});
        }, rng, rep);
        check_one("gather_lastdim", {randn({2, 3, 5})}, [&](auto& v) {
            return foley::gather_lastdim(v[0], {4, 0, 0, 2});
        }, rng, rep);
        check_one("group_norm", {randn({2, 4, 3, 3}), randn({4}), randn({4})}, [&](auto& v) {
            return foley::group_norm(v[0], 2, v[1], v[2]);
        }, rng, rep);
        check_one("mse", {randn({3, 4}), randn({3, 4})}, [&](auto& v) {
            return foley::mse(v[0], v[1]);
        }, rng, rep);
        // composites chain several backward paths through one tape
        check_one("mlp_chain", {randn({2, 5}), randn({5, 4}), randn({4}), randn({4, 3})},
                  [&](auto& v) {
                      DTensor h = foley::silu(foley::add(foley::matmul(v[0], v[1]), v[2]));
                      return foley::matmul(h, v[3]);
                  }, rng, rep);
        check_one("attn_chain", {randn({4, 3}), randn({5, 3})}, [&](auto& v) {
            DTensor scores = foley::mul_scalar(foley::matmul_nt(v[0], v[1]),
                                               1.0 / std::sqrt(3.0));
            return foley::matmul(foley::softmax(scores, 1), v[1]);
        }, rng, rep);
        check_one("res_chain", {randn({1, 4, 4, 4}), randn({4, 4, 3, 3}), randn({4}), randn({4})},
                  [&](auto& v) {
                      DTensor h = foley::group_norm(v[0], 2, v[2], v[3]);
                      h = foley::conv2d(foley::silu(h), v[1], DTensor(), 1, 1);
                      return foley::add(v[0], h);
                  }, rng, rep);
        check_one("reuse_input", {randn({3, 3})}, [&](auto& v) {
            return foley::add(foley::mul(v[0], v[0]), foley::silu(v[0]));
        }, rng, rep);
    }
    return rep;
}

}  // namespace gradcheck
