#pragma once

#include "semd/tensor.hpp"

namespace semd {

// Per-channel running statistics for batch normalization.
struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    static RunningStats create(std::int64_t channels) {
        RunningStats s;
        s.mean.assign(static_cast<std::size_t>(channels), 0.0);
        s.var.assign(static_cast<std::size_t>(channels), 1.0);
        return s;
    }
};

// 2D convolution, 3x3 kernel, zero-padding 1, stride 1 or 2.
// input [B,C,H,W], weight [F,C,3,3], bias [F] -> [B,F,H/s,W/s].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride);

// Transposed 2D convolution, 3x3 kernel, fixed stride 2, padding 1,
// output padding 1: doubles spatial dims.
// input [B,C,H,W], weight [C,F,3,3], bias [F] -> [B,F,2H,2W].
Tensor deconv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

// 1x1 convolution (per-pixel linear map), used for output heads.
// input [B,C,H,W], weight [F,C], bias [F] -> [B,F,H,W].
Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Affine map: input [B,D], weight [E,D], bias [E] -> [B,E].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Batch normalization over the channel axis (axis 1 of [B,C,H,W], or the
// feature axis of [B,D]). Training mode normalizes with batch statistics
// and updates `stats` in place; eval mode uses the running statistics.
Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 RunningStats& stats, bool training);

} // namespace semd
