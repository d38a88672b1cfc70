#include "metamix/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <unordered_set>

#include "metamix/rng.hpp"

namespace metamix {

namespace {

// Per-class allow flags; empty mask means every class is allowed.
std::vector<char> build_mask(int num_classes, const std::vector<int>* masked_classes) {
    if (masked_classes == nullptr) return {};
    std::vector<char> allowed(static_cast<std::size_t>(num_classes), 0);
    for (int c : *masked_classes) {
        if (c < 0 || c >= num_classes) {
            throw DataError("mask class " + std::to_string(c) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
        allowed[static_cast<std::size_t>(c)] = 1;
    }
    return allowed;
}

inline bool class_allowed(const std::vector<char>& mask, int c) {
    return mask.empty() || mask[static_cast<std::size_t>(c)] != 0;
}

void check_batch(const ParamSet& p, const Batch& b) {
    if (b.rows() < 1) throw DataError("empty batch");
    if (b.dim != p.layers.front().in_dim) {
        throw ShapeError("batch width " + std::to_string(b.dim) +
                         " != first layer in_dim " +
                         std::to_string(p.layers.front().in_dim));
    }
    if (b.inputs.size() != static_cast<std::size_t>(b.rows()) * b.dim) {
        throw ShapeError("batch inputs size does not match rows x dim");
    }
    const int num_classes = p.layers.back().out_dim;
    for (int y : b.labels) {
        if (y < 0 || y >= num_classes) {
            throw DataError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
    }
}

struct ForwardTrace {
    // post[k]: activations after layer k, rows x out_dim(k). post.back() are
    // the logits only when the last activation is identity; backward handles
    // the general case via pre.
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> post;
};

void run_forward(const ParamSet& p, const std::vector<double>& inputs, int rows,
                 ForwardTrace* trace, std::vector<double>& out) {
    const double* h = inputs.data();
    int h_dim = p.layers.front().in_dim;
    std::vector<double> cur;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const LayerTensor& L = p.layers[k];
        std::vector<double> z(static_cast<std::size_t>(rows) * L.out_dim);
        for (int r = 0; r < rows; ++r) {
            const double* x = h + static_cast<std::size_t>(r) * h_dim;
            double* zr = z.data() + static_cast<std::size_t>(r) * L.out_dim;
            for (int o = 0; o < L.out_dim; ++o) {
                const double* w = L.weights.data() + static_cast<std::size_t>(o) * L.in_dim;
                double acc = L.bias[static_cast<std::size_t>(o)];
                for (int i = 0; i < L.in_dim; ++i) acc += w[i] * x[i];
                zr[o] = acc;
            }
        }
        if (trace) trace->pre.push_back(z);
        if (L.activation == Activation::relu) {
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        }
        if (trace) trace->post.push_back(z);
        cur = std::move(z);
        h = cur.data();
        h_dim = L.out_dim;
    }
    out = std::move(cur);
}

}  // namespace

std::size_t ParamSet::total_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.entry_count();
    return n;
}

void validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw ConfigError("layer spec list is empty");
    std::unordered_set<std::string> names;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const LayerSpec& s = specs[k];
        if (s.in_dim < 1 || s.out_dim < 1) {
            throw ConfigError("layer '" + s.name + "' has non-positive dims");
        }
        if (!names.insert(s.name).second) {
            throw ConfigError("duplicate layer name '" + s.name + "'");
        }
        if (k > 0 && specs[k - 1].out_dim != s.in_dim) {
            throw ConfigError("layer '" + s.name + "' in_dim " +
                              std::to_string(s.in_dim) + " does not chain from '" +
                              specs[k - 1].name + "' out_dim " +
                              std::to_string(specs[k - 1].out_dim));
        }
    }
}

bool shape_congruent(const ParamSet& a, const ParamSet& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        if (a.layers[k].in_dim != b.layers[k].in_dim ||
            a.layers[k].out_dim != b.layers[k].out_dim)
            return false;
    }
    return true;
}

bool all_finite(const ParamSet& p) {
    for (const auto& l : p.layers) {
        for (double v : l.weights)
            if (!std::isfinite(v)) return false;
        for (double v : l.bias)
            if (!std::isfinite(v)) return false;
    }
    return true;
}

ParamSet init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_specs(specs);
    Rng rng(seed);
    ParamSet p;
    p.layers.reserve(specs.size());
    for (const LayerSpec& s : specs) {
        LayerTensor l;
        l.name = s.name;
        l.in_dim = s.in_dim;
        l.out_dim = s.out_dim;
        l.activation = s.activation;
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.in_dim));
        l.weights.resize(static_cast<std::size_t>(s.out_dim) * s.in_dim);
        for (double& w : l.weights) w = rng.uniform(-scale, scale);
        l.bias.assign(static_cast<std::size_t>(s.out_dim), 0.0);
        p.layers.push_back(std::move(l));
    }
    return p;
}

std::vector<double> forward(const ParamSet& p, const std::vector<double>& inputs,
                            int rows, int dim) {
    if (p.layers.empty()) throw ShapeError("empty ParamSet");
    if (rows < 1) throw ShapeError("forward needs at least one row");
    if (dim != p.layers.front().in_dim) {
        throw ShapeError("input width " + std::to_string(dim) +
                         " != first layer in_dim " +
                         std::to_string(p.layers.front().in_dim));
    }
    if (inputs.size() != static_cast<std::size_t>(rows) * dim) {
        throw ShapeError("inputs size does not match rows x dim");
    }
    std::vector<double> out;
    run_forward(p, inputs, rows, nullptr, out);
    return out;
}

std::pair<double, GradSet> loss_and_grads(const ParamSet& p, const Batch& b,
                                          const std::vector<int>* masked_classes) {
    check_batch(p, b);
    const int rows = b.rows();
    const int num_classes = p.layers.back().out_dim;
    const std::vector<char> mask = build_mask(num_classes, masked_classes);
    if (!mask.empty()) {
        for (int y : b.labels) {
            if (!class_allowed(mask, y)) {
                throw DataError("label " + std::to_string(y) + " not in masked class set");
            }
        }
    }

    ForwardTrace trace;
    std::vector<double> logits;
    run_forward(p, b.inputs, rows, &trace, logits);

    // Softmax restricted to the allowed classes; excluded logits behave as
    // -inf without ever materializing one.
    double loss = 0.0;
    std::vector<double> dlogits(logits.size(), 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* z = logits.data() + static_cast<std::size_t>(r) * num_classes;
        double* dz = dlogits.data() + static_cast<std::size_t>(r) * num_classes;
        double zmax = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < num_classes; ++c) {
            if (class_allowed(mask, c)) zmax = std::max(zmax, z[c]);
        }
        double denom = 0.0;
        for (int c = 0; c < num_classes; ++c) {
            if (class_allowed(mask, c)) denom += std::exp(z[c] - zmax);
        }
        const int y = b.labels[static_cast<std::size_t>(r)];
        loss += -(z[y] - zmax) + std::log(denom);
        const double inv = 1.0 / (denom * rows);
        for (int c = 0; c < num_classes; ++c) {
            if (!class_allowed(mask, c)) continue;
            dz[c] = std::exp(z[c] - zmax) * inv;
        }
        dz[y] -= 1.0 / rows;
    }
    loss /= rows;

    // Reverse pass.
    GradSet g;
    g.layers.resize(p.layers.size());
    std::vector<double> dh = std::move(dlogits);
    for (std::size_t k = p.layers.size(); k-- > 0;) {
        const LayerTensor& L = p.layers[k];
        LayerTensor& gl = g.layers[k];
        gl.name = L.name;
        gl.in_dim = L.in_dim;
        gl.out_dim = L.out_dim;
        gl.weights.assign(L.weights.size(), 0.0);
        gl.bias.assign(L.bias.size(), 0.0);

        // dz = dh * act'(pre)
        std::vector<double>& dz = dh;
        if (L.activation == Activation::relu) {
            const std::vector<double>& pre = trace.pre[k];
            for (std::size_t i = 0; i < dz.size(); ++i) {
                if (pre[i] <= 0.0) dz[i] = 0.0;
            }
        }

        const std::vector<double>* h_in = nullptr;
        const double* h_ptr = nullptr;
        if (k == 0) {
            h_ptr = b.inputs.data();
        } else {
            h_in = &trace.post[k - 1];
            h_ptr = h_in->data();
        }

        std::vector<double> dh_prev(static_cast<std::size_t>(rows) * L.in_dim, 0.0);
        for (int r = 0; r < rows; ++r) {
            const double* x = h_ptr + static_cast<std::size_t>(r) * L.in_dim;
            const double* dzr = dz.data() + static_cast<std::size_t>(r) * L.out_dim;
            double* dxr = dh_prev.data() + static_cast<std::size_t>(r) * L.in_dim;
            for (int o = 0; o < L.out_dim; ++o) {
                const double d = dzr[o];
                if (d == 0.0) continue;
                double* gw = gl.weights.data() + static_cast<std::size_t>(o) * L.in_dim;
                const double* w = L.weights.data() + static_cast<std::size_t>(o) * L.in_dim;
                gl.bias[static_cast<std::size_t>(o)] += d;
                for (int i = 0; i < L.in_dim; ++i) {
                    gw[i] += d * x[i];
                    dxr[i] += d * w[i];
                }
            }
        }
        dh = std::move(dh_prev);
    }
    return {loss, std::move(g)};
}

ParamSet sgd_train(const ParamSet& p, const std::vector<Batch>& data, double lr,
                   int epochs, const std::vector<int>* masked_classes,
                   const BatchObserver* observer) {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (data.empty()) throw ConfigError("no training batches");

    ParamSet cur = p;
    std::size_t step = 0;
    for (int e = 0; e < epochs; ++e) {
        for (const Batch& b : data) {
            if (observer && *observer) (*observer)(b);
            auto [loss, grads] = loss_and_grads(cur, b, masked_classes);
            if (!std::isfinite(loss)) {
                throw DivergenceError("non-finite training loss", step);
            }
            axpy_params(cur, -lr, grads);
            if (!all_finite(cur)) {
                throw DivergenceError("non-finite parameters after update", step);
            }
            ++step;
        }
    }
    return cur;
}

double accuracy(const ParamSet& p, const std::vector<Batch>& batches,
                const std::vector<int>* masked_classes) {
    const int num_classes = p.layers.back().out_dim;
    const std::vector<char> mask = build_mask(num_classes, masked_classes);
    std::size_t correct = 0;
    std::size_t total = 0;
    for (const Batch& b : batches) {
        check_batch(p, b);
        std::vector<double> logits = forward(p, b.inputs, b.rows(), b.dim);
        for (int r = 0; r < b.rows(); ++r) {
            const double* z = logits.data() + static_cast<std::size_t>(r) * num_classes;
            int best = -1;
            double best_v = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < num_classes; ++c) {
                if (!class_allowed(mask, c)) continue;
                if (z[c] > best_v) {
                    best_v = z[c];
                    best = c;
                }
            }
            if (best == b.labels[static_cast<std::size_t>(r)]) ++correct;
            ++total;
        }
    }
    if (total == 0) throw DataError("accuracy over zero examples");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void axpy_params(ParamSet& p, double a, const GradSet& g) {
    if (!shape_congruent(p, g)) throw ShapeError("axpy over incongruent sets");
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        LayerTensor& pl = p.layers[k];
        const LayerTensor& glk = g.layers[k];
        for (std::size_t i = 0; i < pl.weights.size(); ++i) pl.weights[i] += a * glk.weights[i];
        for (std::size_t i = 0; i < pl.bias.size(); ++i) pl.bias[i] += a * glk.bias[i];
    }
}

}  // namespace metamix
