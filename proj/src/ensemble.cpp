#include "metamix/ensemble.hpp"

#include <cmath>
#include <string>

namespace metamix {

ParamSet interpolate_layerwise(const ParamSet& current, const ParamSet& previous,
                               const AlphaVector& alphas) {
    if (!shape_congruent(current, previous)) {
        throw EnsembleError("current and previous parameter sets are not shape-congruent");
    }
    if (alphas.size() != current.layer_count()) {
        throw EnsembleError("alpha length " + std::to_string(alphas.size()) +
                            " != layer count " + std::to_string(current.layer_count()));
    }
    for (double a : alphas.values) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw EnsembleError("alpha " + std::to_string(a) + " outside [0, 1]");
        }
    }

    ParamSet fused;
    fused.layers.reserve(current.layers.size());
    for (std::size_t j = 0; j < current.layers.size(); ++j) {
        const double a = alphas.values[j];
        // Endpoints copy verbatim so alpha in {0, 1} is bit-exact.
        if (a == 1.0) {
            fused.layers.push_back(current.layers[j]);
            continue;
        }
        if (a == 0.0) {
            LayerTensor l = previous.layers[j];
            l.name = current.layers[j].name;
            l.activation = current.layers[j].activation;
            fused.layers.push_back(std::move(l));
            continue;
        }
        const LayerTensor& c = current.layers[j];
        const LayerTensor& p = previous.layers[j];
        LayerTensor l;
        l.name = c.name;
        l.in_dim = c.in_dim;
        l.out_dim = c.out_dim;
        l.activation = c.activation;
        l.weights.resize(c.weights.size());
        l.bias.resize(c.bias.size());
        const double b = 1.0 - a;
        for (std::size_t i = 0; i < c.weights.size(); ++i) {
            l.weights[i] = a * c.weights[i] + b * p.weights[i];
        }
        for (std::size_t i = 0; i < c.bias.size(); ++i) {
            l.bias[i] = a * c.bias[i] + b * p.bias[i];
        }
        fused.layers.push_back(std::move(l));
    }
    return fused;
}

AlphaVector fixed_alpha(int n, double value) {
    if (n < 1) throw ConfigError("alpha vector length must be >= 1");
    if (!(value >= 0.0 && value <= 1.0)) {
        throw ConfigError("fixed alpha " + std::to_string(value) + " outside [0, 1]");
    }
    AlphaVector a;
    a.values.assign(static_cast<std::size_t>(n), value);
    return a;
}

AlphaVector broadcast_alpha(int n, double scalar_alpha) {
    return fixed_alpha(n, scalar_alpha);
}

}  // namespace metamix
