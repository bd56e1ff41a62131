#pragma once

#include "semd/camera.hpp"
#include "semd/checkpoint.hpp"
#include "semd/nn.hpp"
#include "semd/tensor.hpp"

#include <string>
#include <vector>

namespace semd {

struct GeneratorConfig {
    int n_decoders = 8; // divisor of 8; each decoder owns 8/n_decoders views
    std::int64_t input_size = 64;
    std::int64_t output_size = 128;
    std::int64_t latent_dim = 512;
    std::vector<std::int64_t> encoder_conv_filters;  // stride-2 convs, halving each
    std::vector<std::int64_t> encoder_linear_dims;   // last entry == latent_dim
    std::vector<std::int64_t> decoder_linear_dims;   // last entry reshapes to the seed grid
    std::vector<std::int64_t> decoder_deconv_filters; // stride-2 deconvs, doubling each

    int views_per_decoder() const { return 8 / n_decoders; }
    // Seed grid edge after the decoder linears: output_size / 2^(#deconvs).
    std::int64_t reshape_grid() const;
    // Seed grid channels: last decoder linear dim / grid^2.
    std::int64_t reshape_channels() const;

    void validate() const; // throws ConfigError on any inconsistency

    // The two published configurations (64x64 and 128x128 inputs) and a
    // miniature used by tests (32x32 in, 64x64 out).
    static GeneratorConfig table_64(int n_decoders);
    static GeneratorConfig table_128(int n_decoders);
    static GeneratorConfig test_scale(int n_decoders);
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    RunningStats stats;
};

struct EncoderParams {
    std::vector<Tensor> conv_w, conv_b;
    std::vector<BatchNormLayer> conv_bn;
    std::vector<Tensor> lin_w, lin_b;
    std::vector<BatchNormLayer> lin_bn; // one per linear except the latent layer
};

struct DecoderParams {
    std::vector<Tensor> lin_w, lin_b;
    std::vector<BatchNormLayer> lin_bn;
    std::vector<Tensor> deconv_w, deconv_b;
    std::vector<BatchNormLayer> deconv_bn;
    Tensor head_w, head_b; // 1x1 conv to (8/N)*4 channels
};

struct SEMDNetwork {
    GeneratorConfig config;
    EncoderParams encoder;
    std::vector<DecoderParams> decoders;

    // Trainable tensors in a fixed order (encoder first, then decoders).
    std::vector<Tensor> parameters();
    // Same plus batch-norm running statistics, as checkpointable arrays
    // named "encoder.*" / "decoder.<j>.*".
    std::vector<NamedArray> state_arrays() const;
};

// Deterministic initialization; decoder j draws from sub-seed seed + j.
SEMDNetwork init_network(const GeneratorConfig& config, std::uint64_t seed);

// image [B,3,S,S] -> latent [B,latent_dim].
Tensor encode(const Tensor& image, SEMDNetwork& net, bool training);

// latent [B,latent_dim] -> [B, views_per_decoder*4, out, out] for one branch.
Tensor decode_branch_raw(const Tensor& latent, int branch, SEMDNetwork& net, bool training);

// All branches: n_decoders tensors, each [B, views_per_decoder*4, out, out].
std::vector<Tensor> forward_raw(const Tensor& image, SEMDNetwork& net, bool training);

// Single-image convenience paths (eval mode, no gradient graph). Branch j
// owns view indices j*8/N ... (j+1)*8/N - 1.
std::vector<CoordImage> decode_branch(const Tensor& latent, int branch, SEMDNetwork& net);
std::vector<CoordImage> forward(const Tensor& image, SEMDNetwork& net);

// Slice one view's [4,S,S] grid out of a branch output, keeping the graph.
Tensor view_grid(const Tensor& branch_out, std::int64_t batch_item, int view_in_branch);

void save_network(const std::string& path, const SEMDNetwork& net);
SEMDNetwork load_network(const std::string& path);

} // namespace semd
