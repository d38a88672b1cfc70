#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "metamix/coeffgen.hpp"
#include "metamix/ensemble.hpp"
#include "metamix/net.hpp"
#include "metamix/streams.hpp"

namespace metamix {

// Fusion ladder: naive keeps the sequentially trained parameters; E fuses
// with a fixed coefficient; E_ML meta-learns one scalar coefficient; E_ML_LW
// meta-learns an independent coefficient per layer.
enum class Variant { naive, E, E_ML, E_ML_LW };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct MetaConfig {
    int iteration_num = 50;     // outer-loop steps per task (M)
    double meta_lr = 0.15;      // SGD rate on the generator
    double base_lr = 0.1;       // SGD rate for base training
    int base_epochs = 30;       // passes over the task data (forced to 1 under OCIL)
    Variant variant = Variant::E_ML_LW;
    int grad_sample = 256;      // examples used to compute gradient features
    int buffer_batch = 32;      // meta-validation batch size

    // Driver knobs beyond the core loop.
    double fixed_alpha_value = 0.5;      // coefficient for variant E
    int gen_hidden = 0;                  // generator hidden width; 0 = 4 * layer count
    bool buffer_includes_current = true; // let meta-validation see a slice of the current task
    bool refresh_features = false;       // recompute gradient features every outer iteration
    bool replay_base = false;            // interleave buffer replay batches into base training
    FeatureMode feature_mode = FeatureMode::mean;
    bool normalize_feats = true;  // gradient means are tiny; rescaling keeps the generator responsive
    int buffer_per_task = 40;            // examples each task contributes to the buffer
    BufferPolicy buffer_policy = BufferPolicy::reservoir;

    void validate() const;
};

// Everything a finished task hands back to the driver.
struct TaskOutcome {
    ParamSet trained_params;             // after base training on the task
    ParamSet fused_params;               // after interpolation (== trained for task 1 / naive)
    AlphaVector alphas_used;             // all-ones when no fusion happened
    std::vector<double> outer_loss_trace;
};

// Loss of the fused model on a validation batch: interpolate with the
// generator's coefficients, then evaluate. Pure; handles both per-layer and
// scalar-output generators.
double outer_loss(const CoeffGenerator& gen, const GradFeatures& feats,
                  const ParamSet& current, const ParamSet& previous, const Batch& val);

// d(loss)/d(alpha_j) for a loss gradient taken at the fused parameters:
// the inner product of layer j's gradient with (current_j - previous_j).
std::vector<double> alpha_gradient(const GradSet& fused_grads, const ParamSet& current,
                                   const ParamSet& previous);

// Exact gradient of outer_loss with respect to every generator parameter,
// via the closed-form chain rule through the interpolation and the generator.
CoeffGradient outer_gradient(const CoeffGenerator& gen, const GradFeatures& feats,
                             const ParamSet& current, const ParamSet& previous,
                             const Batch& val);

// Optional per-iteration feature refresh; receives a derived seed.
using FeatureRefresh = std::function<GradFeatures(std::uint64_t)>;

// M SGD steps on the generator. Each iteration samples a buffer batch,
// records the outer loss on it, then applies one step. Deterministic per
// seed. Throws ProtocolError on an empty buffer.
std::pair<CoeffGenerator, std::vector<double>> meta_update(
    const CoeffGenerator& gen, const GradFeatures& feats, const ParamSet& current,
    const ParamSet& previous, const MemoryBuffer& buffer, const MetaConfig& cfg,
    std::uint64_t seed, const FeatureRefresh* refresh = nullptr);

// Observer for batches consumed by base training (access counting in tests).
using TrainObserver = BatchObserver;

// One full task of the continual-learning loop: train from the previous
// fused parameters, meta-learn coefficients on the buffer (task 2 onward),
// fuse, then append the task's buffer contribution. `gen` and `buffer` are
// updated in place; the generator persists across tasks.
TaskOutcome run_task(int task_index, const Task& task, const ParamSet& prev_fused,
                     CoeffGenerator& gen, MemoryBuffer& buffer, const MetaConfig& cfg,
                     Protocol protocol, std::uint64_t seed,
                     const TrainObserver* observer = nullptr);

}  // namespace metamix
