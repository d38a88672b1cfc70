#include "metamix/metaloop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "metamix/rng.hpp"

namespace metamix {

namespace {

AlphaVector alphas_from(const CoeffGenerator& gen, const GradFeatures& feats, int n) {
    if (gen.output_dim == 1 && n != 1) {
        return broadcast_alpha(n, generate_scalar(gen, feats));
    }
    AlphaVector a = generate(gen, feats);
    if (a.size() != n) {
        throw ShapeError("generator emits " + std::to_string(a.size()) +
                         " coefficients for a " + std::to_string(n) + "-layer model");
    }
    return a;
}

void axpy_gen(CoeffGenerator& g, double a, const CoeffGradient& d) {
    for (std::size_t i = 0; i < g.w1.size(); ++i) g.w1[i] += a * d.w1[i];
    for (std::size_t i = 0; i < g.b1.size(); ++i) g.b1[i] += a * d.b1[i];
    for (std::size_t i = 0; i < g.w2.size(); ++i) g.w2[i] += a * d.w2[i];
    for (std::size_t i = 0; i < g.b2.size(); ++i) g.b2[i] += a * d.b2[i];
}

bool gen_finite(const CoeffGenerator& g) {
    auto ok = [](const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    return ok(g.w1) && ok(g.b1) && ok(g.w2) && ok(g.b2);
}

// Loss and generator gradient in one pass (meta_update's inner step).
std::pair<double, CoeffGradient> outer_step(const CoeffGenerator& gen,
                                            const GradFeatures& feats,
                                            const ParamSet& current,
                                            const ParamSet& previous, const Batch& val) {
    const int n = current.layer_count();
    const AlphaVector alphas = alphas_from(gen, feats, n);
    const ParamSet fused = interpolate_layerwise(current, previous, alphas);
    auto [loss, grads] = loss_and_grads(fused, val);
    std::vector<double> dalpha = alpha_gradient(grads, current, previous);
    if (gen.output_dim == 1 && n != 1) {
        double total = std::accumulate(dalpha.begin(), dalpha.end(), 0.0);
        dalpha.assign(1, total);
    }
    return {loss, generate_backward(gen, feats, dalpha)};
}

// Deterministic sample of k distinct example indices out of [0, total).
std::vector<std::size_t> pick_indices(std::size_t total, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(std::min(total, k));
    return idx;
}

// Flatten a task's train batches into (pointer, label) views for sampling.
struct ExampleView {
    const double* input;
    int label;
};

std::vector<ExampleView> flatten_train(const Task& task, int dim) {
    std::vector<ExampleView> out;
    for (const Batch& b : task.train) {
        for (int r = 0; r < b.rows(); ++r) {
            out.push_back({b.inputs.data() + static_cast<std::size_t>(r) * dim,
                           b.labels[static_cast<std::size_t>(r)]});
        }
    }
    return out;
}

Batch batch_from_entries(const std::vector<BufferEntry>& entries,
                         const std::vector<std::size_t>& which, int dim) {
    Batch b;
    b.dim = dim;
    for (std::size_t i : which) {
        const BufferEntry& e = entries[i];
        b.inputs.insert(b.inputs.end(), e.input.begin(), e.input.end());
        b.labels.push_back(e.label);
    }
    return b;
}

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::naive: return "naive";
        case Variant::E: return "E";
        case Variant::E_ML: return "E_ML";
        case Variant::E_ML_LW: return "E_ML_LW";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "naive") return Variant::naive;
    if (name == "E") return Variant::E;
    if (name == "E_ML") return Variant::E_ML;
    if (name == "E_ML_LW") return Variant::E_ML_LW;
    throw ConfigError("unknown variant '" + name + "'");
}

void MetaConfig::validate() const {
    if (iteration_num < 1) throw ConfigError("iteration_num must be >= 1");
    if (meta_lr < 0.0) throw ConfigError("meta_lr must be >= 0");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (base_epochs < 1) throw ConfigError("base_epochs must be >= 1");
    if (grad_sample < 1) throw ConfigError("grad_sample must be >= 1");
    if (buffer_batch < 1) throw ConfigError("buffer_batch must be >= 1");
    if (!(fixed_alpha_value >= 0.0 && fixed_alpha_value <= 1.0)) {
        throw ConfigError("fixed_alpha_value outside [0, 1]");
    }
    if (gen_hidden < 0) throw ConfigError("gen_hidden must be >= 0");
    if (buffer_per_task < 1) throw ConfigError("buffer_per_task must be >= 1");
}

double outer_loss(const CoeffGenerator& gen, const GradFeatures& feats,
                  const ParamSet& current, const ParamSet& previous, const Batch& val) {
    const AlphaVector alphas = alphas_from(gen, feats, current.layer_count());
    const ParamSet fused = interpolate_layerwise(current, previous, alphas);
    return loss_and_grads(fused, val).first;
}

std::vector<double> alpha_gradient(const GradSet& fused_grads, const ParamSet& current,
                                   const ParamSet& previous) {
    if (!shape_congruent(fused_grads, current) || !shape_congruent(current, previous)) {
        throw ShapeError("alpha_gradient over incongruent parameter sets");
    }
    std::vector<double> dalpha(fused_grads.layers.size(), 0.0);
    for (std::size_t j = 0; j < fused_grads.layers.size(); ++j) {
        const LayerTensor& g = fused_grads.layers[j];
        const LayerTensor& c = current.layers[j];
        const LayerTensor& p = previous.layers[j];
        double acc = 0.0;
        for (std::size_t i = 0; i < g.weights.size(); ++i) {
            acc += g.weights[i] * (c.weights[i] - p.weights[i]);
        }
        for (std::size_t i = 0; i < g.bias.size(); ++i) {
            acc += g.bias[i] * (c.bias[i] - p.bias[i]);
        }
        dalpha[j] = acc;
    }
    return dalpha;
}

CoeffGradient outer_gradient(const CoeffGenerator& gen, const GradFeatures& feats,
                             const ParamSet& current, const ParamSet& previous,
                             const Batch& val) {
    return outer_step(gen, feats, current, previous, val).second;
}

std::pair<CoeffGenerator, std::vector<double>> meta_update(
    const CoeffGenerator& gen, const GradFeatures& feats, const ParamSet& current,
    const ParamSet& previous, const MemoryBuffer& buffer, const MetaConfig& cfg,
    std::uint64_t seed, const FeatureRefresh* refresh) {
    cfg.validate();
    if (buffer.empty()) {
        throw ProtocolError("meta_update over an empty buffer (skip it for task 1)");
    }
    CoeffGenerator cur = gen;
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(cfg.iteration_num));
    GradFeatures f = feats;
    for (int m = 0; m < cfg.iteration_num; ++m) {
        if (refresh && *refresh) {
            f = (*refresh)(derive_seed(seed, "feat-refresh", static_cast<std::uint64_t>(m)));
        }
        const Batch val = buffer_sample(buffer, cfg.buffer_batch,
                                        derive_seed(seed, "meta-batch", static_cast<std::uint64_t>(m)));
        auto [loss, grad] = outer_step(cur, f, current, previous, val);
        trace.push_back(loss);
        axpy_gen(cur, -cfg.meta_lr, grad);
        if (!gen_finite(cur)) {
            throw DivergenceError("non-finite generator parameters", static_cast<std::size_t>(m));
        }
    }
    return {std::move(cur), std::move(trace)};
}

TaskOutcome run_task(int task_index, const Task& task, const ParamSet& prev_fused,
                     CoeffGenerator& gen, MemoryBuffer& buffer, const MetaConfig& cfg,
                     Protocol protocol, std::uint64_t seed, const TrainObserver* observer) {
    cfg.validate();
    if (task_index < 0) throw ConfigError("task index must be >= 0");
    if (task.train.empty()) throw DataError("task has no training batches");
    const int n = prev_fused.layer_count();
    const int dim = prev_fused.layers.front().in_dim;

    const std::vector<int>* train_mask = (protocol == Protocol::TIL) ? &task.classes : nullptr;
    const int epochs = (protocol == Protocol::OCIL) ? 1 : cfg.base_epochs;

    // Base training starts from the previous fused parameters.
    std::vector<Batch> train_batches = task.train;
    if (cfg.replay_base && !buffer.empty()) {
        // Interleave one buffer batch behind every current batch. Replay
        // batches carry task_id -2 and train against the full head.
        std::vector<Batch> mixed;
        mixed.reserve(train_batches.size() * 2);
        for (std::size_t b = 0; b < train_batches.size(); ++b) {
            mixed.push_back(train_batches[b]);
            Batch replay = buffer_sample(buffer, cfg.buffer_batch,
                                         derive_seed(seed, "replay", b));
            replay.task_id = -2;
            mixed.push_back(std::move(replay));
        }
        train_batches = std::move(mixed);
    }
    const std::vector<int>* sgd_mask = (cfg.replay_base && !buffer.empty()) ? nullptr : train_mask;
    ParamSet trained = sgd_train(prev_fused, train_batches, cfg.base_lr, epochs,
                                 sgd_mask, observer);

    // Select this task's buffer contribution (stored after fusion, but the
    // slice also serves meta-validation and the OCIL gradient sample).
    std::vector<ExampleView> pool = flatten_train(task, dim);
    const std::size_t quota = std::min<std::size_t>(pool.size(),
                                                    static_cast<std::size_t>(cfg.buffer_per_task));
    std::vector<BufferEntry> slice;
    for (std::size_t i : pick_indices(pool.size(), quota, derive_seed(seed, "slice"))) {
        BufferEntry e;
        e.input.assign(pool[i].input, pool[i].input + dim);
        e.label = pool[i].label;
        e.task_id = task.task_id;
        slice.push_back(std::move(e));
    }

    TaskOutcome out;
    out.trained_params = trained;

    const bool fuse = task_index > 0 && cfg.variant != Variant::naive;
    if (!fuse) {
        out.fused_params = trained;
        out.alphas_used = fixed_alpha(n, 1.0);
    } else {
        // Gradient features of the trained model. Under OCIL the sample comes
        // from the stored slice so the training stream is not touched again.
        auto features_at = [&](std::uint64_t fseed) {
            Batch sample;
            if (protocol == Protocol::OCIL) {
                sample = batch_from_entries(
                    slice,
                    pick_indices(slice.size(),
                                 static_cast<std::size_t>(cfg.grad_sample), fseed),
                    dim);
            } else {
                Batch b;
                b.dim = dim;
                for (std::size_t i : pick_indices(pool.size(),
                                                  static_cast<std::size_t>(cfg.grad_sample), fseed)) {
                    b.inputs.insert(b.inputs.end(), pool[i].input, pool[i].input + dim);
                    b.labels.push_back(pool[i].label);
                }
                sample = std::move(b);
            }
            GradFeatures f = featurize(loss_and_grads(trained, sample, train_mask).second,
                                       cfg.feature_mode);
            return cfg.normalize_feats ? normalize_features(f) : f;
        };

        if (cfg.variant == Variant::E) {
            out.alphas_used = fixed_alpha(n, cfg.fixed_alpha_value);
        } else {
            GradFeatures feats = features_at(derive_seed(seed, "grad-sample"));

            MemoryBuffer meta_view = buffer;
            if (cfg.buffer_includes_current) {
                meta_view.capacity = buffer.entries.size() + slice.size();
                meta_view.entries.insert(meta_view.entries.end(), slice.begin(), slice.end());
            }
            FeatureRefresh refresh = features_at;
            auto [updated, trace] =
                meta_update(gen, feats, trained, prev_fused, meta_view, cfg,
                            derive_seed(seed, "meta"),
                            cfg.refresh_features ? &refresh : nullptr);
            gen = std::move(updated);
            out.outer_loss_trace = std::move(trace);
            if (cfg.refresh_features) feats = features_at(derive_seed(seed, "grad-sample"));
            out.alphas_used = (cfg.variant == Variant::E_ML)
                                  ? broadcast_alpha(n, generate_scalar(gen, feats))
                                  : alphas_from(gen, feats, n);
        }
        out.fused_params = interpolate_layerwise(trained, prev_fused, out.alphas_used);
    }

    buffer = buffer_add(buffer, slice, cfg.buffer_policy, derive_seed(seed, "buffer"));
    return out;
}

}  // namespace metamix
