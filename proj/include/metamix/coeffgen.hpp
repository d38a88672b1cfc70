#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "metamix/ensemble.hpp"
#include "metamix/net.hpp"

namespace metamix {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One scalar per layer: the mean over all gradient entries of that layer.
struct GradFeatures {
    std::vector<double> values;

    int size() const { return static_cast<int>(values.size()); }
};

enum class FeatureMode {
    mean,      // signed mean of the layer's gradient entries
    mean_abs,  // mean absolute value
};

// Two affine layers with a ReLU between them and a sigmoid on the output,
// mapping per-layer gradient features to mixing coefficients. Weights are
// row-major, as in LayerTensor.
struct CoeffGenerator {
    int input_dim = 0;   // n (layer count of the base learner)
    int hidden_dim = 0;  // h
    int output_dim = 0;  // n, or 1 for the scalar ablation
    std::vector<double> w1;  // h x n
    std::vector<double> b1;  // h
    std::vector<double> w2;  // out x h
    std::vector<double> b2;  // out

    std::size_t total_params() const {
        return w1.size() + b1.size() + w2.size() + b2.size();
    }
};

// Gradient of a scalar objective with respect to every generator parameter;
// same layout as the generator itself.
using CoeffGradient = CoeffGenerator;

GradFeatures featurize(const GradSet& grads, FeatureMode mode = FeatureMode::mean);

// Rescale features by their largest magnitude (no-op on an all-zero vector).
GradFeatures normalize_features(const GradFeatures& feats);

// Per-layer generator: input and output width both n.
CoeffGenerator gen_init(int n, int h, std::uint64_t seed);

// Scalar-output generator for the one-coefficient ablation.
CoeffGenerator gen_init_scalar(int n, int h, std::uint64_t seed);

// alpha = sigmoid(w2 * relu(w1 * feats + b1) + b2). Every output is strictly
// inside (0, 1). Pure function.
AlphaVector generate(const CoeffGenerator& gen, const GradFeatures& feats);

// Same map for a generator with output width 1.
double generate_scalar(const CoeffGenerator& gen, const GradFeatures& feats);

// Reverse-mode pass through the generator: given dL/dalpha, return dL/dPhi.
// upstream.size() must equal gen.output_dim.
CoeffGradient generate_backward(const CoeffGenerator& gen, const GradFeatures& feats,
                                const std::vector<double>& upstream);

}  // namespace metamix
