#include "pgfwi/adam.hpp"

#include <cmath>
#include <string>

namespace pgfwi {

void adam_step(std::span<Tensor> params, AdamState& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw AutodiffError("adam_step: parameter " + std::to_string(i) + " has no gradient");
        }
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v2.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v2[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw AutodiffError("adam_step: optimizer holds " + std::to_string(state.m.size()) +
                            " moment buffers for " + std::to_string(params.size()) + " parameters");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto x = params[i].data();
        auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v2[i];
        if (m.size() != x.size()) {
            throw AutodiffError("adam_step: moment buffer " + std::to_string(i) + " has wrong size");
        }
        for (std::size_t k = 0; k < x.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            x[k] -= state.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
        }
        params[i].zero_grad();
    }
}

} // namespace pgfwi
