#include "metamix/coeffgen.hpp"

#include <algorithm>
#include <string>

#include "metamix/rng.hpp"

namespace metamix {

namespace {

void check_feats(const CoeffGenerator& gen, const GradFeatures& feats) {
    if (feats.size() != gen.input_dim) {
        throw ShapeError("feature width " + std::to_string(feats.size()) +
                         " != generator input width " + std::to_string(gen.input_dim));
    }
    for (double v : feats.values) {
        if (!std::isfinite(v)) throw DataError("non-finite gradient feature");
    }
}

// Affine pass shared by generate / generate_backward. Returns hidden
// pre-activation u, hidden activation r, and output pre-activation s.
void gen_forward(const CoeffGenerator& gen, const GradFeatures& feats,
                 std::vector<double>& u, std::vector<double>& r,
                 std::vector<double>& s) {
    const int n = gen.input_dim, h = gen.hidden_dim, out = gen.output_dim;
    u.assign(static_cast<std::size_t>(h), 0.0);
    for (int j = 0; j < h; ++j) {
        double acc = gen.b1[static_cast<std::size_t>(j)];
        const double* w = gen.w1.data() + static_cast<std::size_t>(j) * n;
        for (int i = 0; i < n; ++i) acc += w[i] * feats.values[static_cast<std::size_t>(i)];
        u[static_cast<std::size_t>(j)] = acc;
    }
    r = u;
    for (double& v : r) v = v > 0.0 ? v : 0.0;
    s.assign(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
        double acc = gen.b2[static_cast<std::size_t>(o)];
        const double* w = gen.w2.data() + static_cast<std::size_t>(o) * h;
        for (int j = 0; j < h; ++j) acc += w[j] * r[static_cast<std::size_t>(j)];
        s[static_cast<std::size_t>(o)] = acc;
    }
}

CoeffGenerator init_impl(int n, int h, int out, std::uint64_t seed) {
    if (n < 1) throw ConfigError("generator input width must be >= 1");
    if (h < 1) throw ConfigError("generator hidden width must be >= 1");
    Rng rng(seed);
    CoeffGenerator g;
    g.input_dim = n;
    g.hidden_dim = h;
    g.output_dim = out;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(n));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    g.w1.resize(static_cast<std::size_t>(h) * n);
    for (double& w : g.w1) w = rng.uniform(-s1, s1);
    g.b1.assign(static_cast<std::size_t>(h), 0.0);
    g.w2.resize(static_cast<std::size_t>(out) * h);
    for (double& w : g.w2) w = rng.uniform(-s2, s2);
    g.b2.assign(static_cast<std::size_t>(out), 0.0);
    return g;
}

}  // namespace

GradFeatures featurize(const GradSet& grads, FeatureMode mode) {
    GradFeatures f;
    f.values.reserve(grads.layers.size());
    for (const LayerTensor& l : grads.layers) {
        const std::size_t count = l.entry_count();
        if (count == 0) throw Error("layer '" + l.name + "' has no entries");
        double sum = 0.0;
        if (mode == FeatureMode::mean) {
            for (double v : l.weights) sum += v;
            for (double v : l.bias) sum += v;
        } else {
            for (double v : l.weights) sum += std::abs(v);
            for (double v : l.bias) sum += std::abs(v);
        }
        const double mean = sum / static_cast<double>(count);
        if (!std::isfinite(mean)) throw DataError("non-finite gradient feature");
        f.values.push_back(mean);
    }
    return f;
}

GradFeatures normalize_features(const GradFeatures& feats) {
    double peak = 0.0;
    for (double v : feats.values) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return feats;
    GradFeatures out = feats;
    for (double& v : out.values) v /= peak;
    return out;
}

CoeffGenerator gen_init(int n, int h, std::uint64_t seed) {
    return init_impl(n, h, n, seed);
}

CoeffGenerator gen_init_scalar(int n, int h, std::uint64_t seed) {
    return init_impl(n, h, 1, seed);
}

AlphaVector generate(const CoeffGenerator& gen, const GradFeatures& feats) {
    check_feats(gen, feats);
    std::vector<double> u, r, s;
    gen_forward(gen, feats, u, r, s);
    AlphaVector a;
    a.values.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) a.values[i] = sigmoid(s[i]);
    return a;
}

double generate_scalar(const CoeffGenerator& gen, const GradFeatures& feats) {
    if (gen.output_dim != 1) {
        throw ConfigError("generate_scalar needs a generator with output width 1");
    }
    return generate(gen, feats).values[0];
}

CoeffGradient generate_backward(const CoeffGenerator& gen, const GradFeatures& feats,
                                const std::vector<double>& upstream) {
    check_feats(gen, feats);
    if (upstream.size() != static_cast<std::size_t>(gen.output_dim)) {
        throw ShapeError("upstream width " + std::to_string(upstream.size()) +
                         " != generator output width " + std::to_string(gen.output_dim));
    }
    const int n = gen.input_dim, h = gen.hidden_dim, out = gen.output_dim;
    std::vector<double> u, r, s;
    gen_forward(gen, feats, u, r, s);

    CoeffGradient g;
    g.input_dim = n;
    g.hidden_dim = h;
    g.output_dim = out;
    g.w1.assign(gen.w1.size(), 0.0);
    g.b1.assign(gen.b1.size(), 0.0);
    g.w2.assign(gen.w2.size(), 0.0);
    g.b2.assign(gen.b2.size(), 0.0);

    // ds = upstream * sigmoid'(s)
    std::vector<double> ds(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        const double a = sigmoid(s[static_cast<std::size_t>(o)]);
        ds[static_cast<std::size_t>(o)] = upstream[static_cast<std::size_t>(o)] * a * (1.0 - a);
    }
    std::vector<double> dr(static_cast<std::size_t>(h), 0.0);
    for (int o = 0; o < out; ++o) {
        const double d = ds[static_cast<std::size_t>(o)];
        g.b2[static_cast<std::size_t>(o)] = d;
        double* gw = g.w2.data() + static_cast<std::size_t>(o) * h;
        const double* w = gen.w2.data() + static_cast<std::size_t>(o) * h;
        for (int j = 0; j < h; ++j) {
            gw[j] = d * r[static_cast<std::size_t>(j)];
            dr[static_cast<std::size_t>(j)] += d * w[j];
        }
    }
    for (int j = 0; j < h; ++j) {
        const double du = u[static_cast<std::size_t>(j)] > 0.0 ? dr[static_cast<std::size_t>(j)] : 0.0;
        g.b1[static_cast<std::size_t>(j)] = du;
        double* gw = g.w1.data() + static_cast<std::size_t>(j) * n;
        for (int i = 0; i < n; ++i) {
            gw[i] = du * feats.values[static_cast<std::size_t>(i)];
        }
    }
    return g;
}

}  // namespace metamix
