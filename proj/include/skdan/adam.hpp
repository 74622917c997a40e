#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skdan/tensor.hpp"

namespace skdan {

// Bias-corrected Adam state for a fixed list of parameter tensors.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Tensor> m;  // first moments, one per parameter
    std::vector<Tensor> v;  // second moments

    static AdamState init(const std::vector<Tensor*>& params, double learning_rate,
                          double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
        AdamState s;
        s.learning_rate = learning_rate;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const Tensor* p : params) {
            s.m.emplace_back(p->shape());
            s.v.emplace_back(p->shape());
        }
        return s;
    }
};

// One Adam update over all parameters. Deterministic given inputs; a zero
// gradient leaves the corresponding parameter unchanged.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimensionError("adam_step: got " + std::to_string(params.size()) + " parameters, " +
                             std::to_string(grads.size()) + " gradients, state for " +
                             std::to_string(state.m.size()));
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        if (p.shape() != g.shape() || p.shape() != state.m[i].shape())
            throw DimensionError("adam_step: parameter " + std::to_string(i) + " shape " +
                                 shape_str(p.shape()) + " does not match gradient " +
                                 shape_str(g.shape()));
        auto& m = state.m[i].flat();
        auto& v = state.v[i].flat();
        m = state.beta1 * m + (1.0 - state.beta1) * g.flat();
        v = state.beta2 * v + (1.0 - state.beta2) * g.flat().square();
        p.flat() -= state.learning_rate * (m / bc1) / ((v / bc2).sqrt() + state.epsilon);
    }
}

}  // namespace skdan
