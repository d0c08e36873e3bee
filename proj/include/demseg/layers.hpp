#pragma once

#include <vector>

#include "demseg/tensor.hpp"

namespace demseg::layers {

// Layer primitives of the encoder-decoder network. Forward passes take the
// layer input plus parameters; backward passes take the cached forward input
// and the gradient flowing in from above, and accumulate nothing -- every
// gradient buffer is (re)computed from scratch.

// 3x3 convolution, stride 1, zero padding 1 (shape preserving).
// Kernel layout [c_out, c_in, 3, 3].
Tensor4 conv3x3_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias);
void conv3x3_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                      Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias);

// 2x2 convolution, stride 2 (halves even H and W). Kernel [c_out, c_in, 2, 2].
Tensor4 conv2x2s2_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias);
void conv2x2s2_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                        Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias);

// 2x2 transposed convolution, stride 2 (doubles H and W). Kernel [c_out, c_in, 2, 2].
Tensor4 tconv2x2s2_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias);
void tconv2x2s2_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                         Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias);

// 1x1 convolution. Kernel [c_out, c_in, 1, 1].
Tensor4 conv1x1_forward(const Tensor4& x, const Tensor4& k, const std::vector<double>& bias);
void conv1x1_backward(const Tensor4& x, const Tensor4& k, const Tensor4& grad_y,
                      Tensor4& grad_x, Tensor4& grad_k, std::vector<double>& grad_bias);

// Instance norm: per (sample, channel) standardization over H*W with
// population variance, then an affine scale/shift.
struct InstanceNormCache {
    Tensor4 xhat;
    std::vector<double> inv_std;  // one per (n, c)
};
Tensor4 instance_norm_forward(const Tensor4& x, const std::vector<double>& gamma,
                              const std::vector<double>& beta, double epsilon,
                              InstanceNormCache& cache);
void instance_norm_backward(const InstanceNormCache& cache, const std::vector<double>& gamma,
                            const Tensor4& grad_y, Tensor4& grad_x,
                            std::vector<double>& grad_gamma, std::vector<double>& grad_beta);

// Leaky ReLU; the derivative at exactly 0 takes the negative-slope branch.
Tensor4 leaky_relu_forward(const Tensor4& x, double negative_slope);
Tensor4 leaky_relu_backward(const Tensor4& y, double negative_slope, const Tensor4& grad_y);

// Channel concatenation [a | b] and its adjoint split.
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
void split_channels(const Tensor4& grad_cat, Tensor4& grad_a, Tensor4& grad_b);

}  // namespace demseg::layers
