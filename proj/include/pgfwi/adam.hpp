#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pgfwi/tensor.hpp"

namespace pgfwi {

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v2;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update of every parameter, then clears the grads.
// Moment buffers are created on the first call and must keep matching the
// parameter list afterwards.
void adam_step(std::span<Tensor> params, AdamState& state);

} // namespace pgfwi
