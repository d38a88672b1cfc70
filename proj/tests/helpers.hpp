#pragma once

// Shared oracles and fixtures for the test binaries. Everything here is
// deliberately naive: independent re-computations, not calls back into the
// code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "metamix/coeffgen.hpp"
#include "metamix/net.hpp"
#include "metamix/rng.hpp"

namespace testutil {

inline bool params_equal(const metamix::ParamSet& a, const metamix::ParamSet& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        if (a.layers[k].in_dim != b.layers[k].in_dim) return false;
        if (a.layers[k].out_dim != b.layers[k].out_dim) return false;
        if (a.layers[k].weights != b.layers[k].weights) return false;
        if (a.layers[k].bias != b.layers[k].bias) return false;
    }
    return true;
}

inline bool gens_equal(const metamix::CoeffGenerator& a, const metamix::CoeffGenerator& b) {
    return a.input_dim == b.input_dim && a.hidden_dim == b.hidden_dim &&
           a.output_dim == b.output_dim && a.w1 == b.w1 && a.b1 == b.b1 &&
           a.w2 == b.w2 && a.b2 == b.b2;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

// Random batch with labels drawn from `classes`.
inline metamix::Batch random_batch(metamix::Rng& rng, int rows, int dim,
                                   const std::vector<int>& classes) {
    metamix::Batch b;
    b.dim = dim;
    b.inputs.resize(static_cast<std::size_t>(rows) * dim);
    for (double& v : b.inputs) v = rng.uniform(-1.0, 1.0);
    b.labels.resize(rows);
    for (int& l : b.labels) l = classes[rng.below(classes.size())];
    return b;
}

inline std::vector<int> iota_classes(int n) {
    std::vector<int> c(n);
    for (int i = 0; i < n; ++i) c[i] = i;
    return c;
}

// Central-difference gradient of the batch loss with respect to every
// parameter entry.
inline metamix::GradSet fd_loss_gradient(const metamix::ParamSet& p,
                                         const metamix::Batch& b,
                                         const std::vector<int>* mask, double eps) {
    metamix::GradSet fd = p;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        auto bump = [&](std::vector<double> metamix::LayerTensor::* field, std::size_t i) {
            metamix::ParamSet hi = p;
            metamix::ParamSet lo = p;
            (hi.layers[k].*field)[i] += eps;
            (lo.layers[k].*field)[i] -= eps;
            const double lp = metamix::loss_and_grads(hi, b, mask).first;
            const double lm = metamix::loss_and_grads(lo, b, mask).first;
            return (lp - lm) / (2.0 * eps);
        };
        for (std::size_t i = 0; i < p.layers[k].weights.size(); ++i) {
            fd.layers[k].weights[i] = bump(&metamix::LayerTensor::weights, i);
        }
        for (std::size_t i = 0; i < p.layers[k].bias.size(); ++i) {
            fd.layers[k].bias[i] = bump(&metamix::LayerTensor::bias, i);
        }
    }
    return fd;
}

// Largest relative error between an analytic GradSet and its
// finite-difference counterpart.
inline double max_grad_rel_err(const metamix::GradSet& analytic,
                               const metamix::GradSet& fd, double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t k = 0; k < analytic.layers.size(); ++k) {
        for (std::size_t i = 0; i < analytic.layers[k].weights.size(); ++i) {
            worst = std::max(worst, rel_err(analytic.layers[k].weights[i],
                                            fd.layers[k].weights[i], floor));
        }
        for (std::size_t i = 0; i < analytic.layers[k].bias.size(); ++i) {
            worst = std::max(worst, rel_err(analytic.layers[k].bias[i],
                                            fd.layers[k].bias[i], floor));
        }
    }
    return worst;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace testutil
