#pragma once

#include <functional>
#include <string>
#include <vector>

#include "demseg/layers.hpp"
#include "demseg/tensor.hpp"

namespace demseg {

struct UNetConfig {
    int in_channels = 1;
    int num_classes = 2;
    int depth = 3;  // resolution levels
    int base_channels = 8;
    double negative_slope = 0.01;
    double norm_epsilon = 1e-5;

    bool valid() const {
        return in_channels >= 1 && num_classes >= 2 && depth >= 2 && base_channels >= 1 &&
               negative_slope >= 0.0 && norm_epsilon > 0.0;
    }
    // channels double per level, capped at 16x base
    int channels_at(int level) const {
        int mult = 1;
        for (int i = 0; i < level && mult < 16; ++i) mult *= 2;
        return base_channels * mult;
    }
    int grid_multiple() const { return 1 << (depth - 1); }
    bool operator==(const UNetConfig&) const = default;
};

// Two conv(3x3) + instance-norm + leaky-ReLU stages.
struct ConvParams {
    Tensor4 w;
    std::vector<double> b;
};
struct NormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
};
struct BlockParams {
    ConvParams conv1;
    NormParams norm1;
    ConvParams conv2;
    NormParams norm2;
};

// All trainable tensors. The same structure doubles as the gradient and the
// optimizer-velocity container.
struct UNetParams {
    UNetConfig config;
    std::vector<BlockParams> enc;  // depth blocks
    std::vector<ConvParams> down;  // depth-1 strided 2x2 convs
    std::vector<ConvParams> up;    // depth-1 transposed 2x2 convs
    std::vector<BlockParams> dec;  // depth-1 blocks
    ConvParams head;               // final 1x1 conv to num_classes

    // Visits every parameter array in the fixed manifest order used by
    // checkpoints, gradients and the optimizer.
    void for_each_array(const std::function<void(const std::string&, std::vector<double>&,
                                                 const std::vector<int>&)>& fn);
    void for_each_array(const std::function<void(const std::string&, const std::vector<double>&,
                                                 const std::vector<int>&)>& fn) const;
};

// Zero-filled parameter set with the shapes implied by the config.
UNetParams zero_params(const UNetConfig& config);

// He initialization for conv kernels (zero mean, variance 2/fan_in), zero
// biases and shifts, unit norm scales. Fully determined by the seed.
UNetParams init_params(const UNetConfig& config, std::uint64_t seed);

struct BlockCache {
    Tensor4 in;
    layers::InstanceNormCache n1;
    Tensor4 a1;  // first activation output (also conv2 input)
    layers::InstanceNormCache n2;
    Tensor4 out;
};

// Everything backward needs; block caches hold the conv inputs and
// normalization statistics, skip/connection tensors are recoverable from
// the block outputs.
struct UNetCache {
    Tensor4 input;
    std::vector<BlockCache> enc;
    std::vector<BlockCache> dec;
};

// Deterministic forward pass; H and W must be divisible by 2^(depth-1).
Tensor4 unet_forward(const UNetParams& params, const Tensor4& input, UNetCache& cache);

// Gradients of sum(logits * grad_logits) w.r.t. every parameter and the input.
struct UNetGradients {
    UNetParams params;  // same layout as the model parameters
    Tensor4 input;
};
UNetGradients unet_backward(const UNetParams& params, const UNetCache& cache,
                            const Tensor4& grad_logits);

// Channel-wise softmax per spatial position, max-stabilized.
Tensor4 softmax(const Tensor4& logits);

// Maps a probs-domain gradient through the softmax Jacobian into logits domain.
Tensor4 softmax_backward(const Tensor4& probs, const Tensor4& grad_probs);

struct PadRecord {
    int top = 0, left = 0;
    int orig_h = 0, orig_w = 0;
};

// Zero-pads H and W up to the next multiple of 2^(depth-1), splitting the pad
// evenly with the extra voxel on the high side.
Tensor4 pad_to_grid(const Tensor4& input, int depth, PadRecord& record);
Tensor4 crop_from_grid(const Tensor4& padded, const PadRecord& record);

}  // namespace demseg
