#pragma once

#include <vector>

#include "metamix/net.hpp"

namespace metamix {

// One mixing coefficient per layer, each in [0, 1]. The generator emits
// open-interval values; the fixed ablation may use the endpoints.
struct AlphaVector {
    std::vector<double> values;

    int size() const { return static_cast<int>(values.size()); }
};

// Layer-wise linear interpolation: for layer j, every weight and bias entry
// becomes alpha_j * current + (1 - alpha_j) * previous. alpha_j == 1 returns
// the current layer bit-for-bit, alpha_j == 0 the previous one.
ParamSet interpolate_layerwise(const ParamSet& current, const ParamSet& previous,
                               const AlphaVector& alphas);

// Constant coefficient vector (the fixed-coefficient ablation).
AlphaVector fixed_alpha(int n, double value);

// One learned scalar replicated to every layer (the scalar ablation).
AlphaVector broadcast_alpha(int n, double scalar_alpha);

}  // namespace metamix
