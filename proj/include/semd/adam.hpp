#pragma once

#include "semd/tensor.hpp"

#include <vector>

namespace semd {

// Per-parameter Adam moment buffers. `step` counts completed updates and
// drives the bias correction.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m; // first moments, one per parameter
    std::vector<std::vector<double>> v; // second moments

    static AdamState create(const std::vector<Tensor>& params, double lr);
};

// One Adam update over `params` using their accumulated gradients.
// Throws UninitializedGradientError if any parameter lacks a gradient.
void adam_step(AdamState& state, std::vector<Tensor>& params);

// Global L2-norm gradient clipping: if the norm across all gradients
// exceeds `max_norm`, scales every gradient by max_norm / norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

} // namespace semd
