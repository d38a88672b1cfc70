#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "metamix/errors.hpp"

namespace metamix {

enum class Activation { relu, identity };

// Shape of one fully connected layer.
struct LayerSpec {
    std::string name;
    int in_dim = 0;
    int out_dim = 0;
    Activation activation = Activation::relu;
};

// Weights and bias of one layer. Weights are row-major out_dim x in_dim.
struct LayerTensor {
    std::string name;
    int in_dim = 0;
    int out_dim = 0;
    Activation activation = Activation::relu;
    std::vector<double> weights;
    std::vector<double> bias;

    std::size_t entry_count() const {
        return weights.size() + bias.size();
    }
};

// Ordered per-layer parameters of the base learner. Value-semantic:
// operations return fresh ParamSets and never mutate their inputs.
struct ParamSet {
    std::vector<LayerTensor> layers;

    int layer_count() const { return static_cast<int>(layers.size()); }
    std::size_t total_params() const;
};

// Gradients mirror parameter shapes exactly, so they share the container.
using GradSet = ParamSet;

// A batch of examples. Inputs are row-major rows x dim.
struct Batch {
    int dim = 0;
    std::vector<double> inputs;
    std::vector<int> labels;
    int task_id = -1;  // -1: not tagged

    int rows() const { return static_cast<int>(labels.size()); }
};

// Throws ConfigError unless the specs are non-empty, shape-chained and
// uniquely named.
void validate_specs(const std::vector<LayerSpec>& specs);

bool shape_congruent(const ParamSet& a, const ParamSet& b);
bool all_finite(const ParamSet& p);

// Weights uniform in (-1/sqrt(in_dim), 1/sqrt(in_dim)), biases zero.
// Deterministic per seed.
ParamSet init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed);

// Logits for a row-major inputs matrix (rows x first-layer in_dim).
// Pure function; returns rows x last-layer out_dim, row-major.
std::vector<double> forward(const ParamSet& p, const std::vector<double>& inputs,
                            int rows, int dim);

// Mean softmax cross-entropy over the batch plus its exact reverse-mode
// gradient. When masked_classes is given, classes outside it are excluded
// from the softmax (their logits are taken to -inf); every label must then
// lie inside the mask.
std::pair<double, GradSet> loss_and_grads(const ParamSet& p, const Batch& b,
                                          const std::vector<int>* masked_classes = nullptr);

// Called right before a batch is consumed by a training step.
using BatchObserver = std::function<void(const Batch&)>;

// Plain SGD over the batches in order, `epochs` passes. Returns the updated
// parameters; the input ParamSet is untouched. Non-finite loss or parameters
// raise DivergenceError carrying the global step index.
ParamSet sgd_train(const ParamSet& p, const std::vector<Batch>& data, double lr,
                   int epochs, const std::vector<int>* masked_classes = nullptr,
                   const BatchObserver* observer = nullptr);

// Fraction of examples whose argmax logit (over the mask, if given) equals
// the label.
double accuracy(const ParamSet& p, const std::vector<Batch>& batches,
                const std::vector<int>* masked_classes = nullptr);

// p += a * g, entrywise across all layers.
void axpy_params(ParamSet& p, double a, const GradSet& g);

}  // namespace metamix
