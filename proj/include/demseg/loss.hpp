#pragma once

#include "demseg/tensor.hpp"
#include "demseg/unet.hpp"

namespace demseg {

struct TrainHyper {
    double lr0 = 0.01;
    double momentum = 0.99;
    int max_epochs = 30;
    double poly_exponent = 0.9;
    double dice_epsilon = 1e-5;

    bool valid() const {
        return lr0 > 0.0 && momentum >= 0.0 && momentum < 1.0 && max_epochs >= 1 &&
               dice_epsilon > 0.0;
    }
};

struct LossGrad {
    double loss = 0.0;
    Tensor4 grad;
};

// Soft Dice over the non-background classes, sums pooled over batch and
// space: d_c = (2*sum(p_c*g_c) + eps) / (sum(p_c) + sum(g_c) + eps),
// loss = 1 - mean_c d_c. Gradient is w.r.t. the probabilities.
LossGrad dice_loss(const Tensor4& probs, const Tensor4& target_onehot, double epsilon = 1e-5);

// Mean over voxels of -log p_true (p clamped at 1e-12). The gradient is the
// combined softmax + cross-entropy gradient (probs - target) / num_voxels,
// expressed in the logits domain.
LossGrad cross_entropy(const Tensor4& probs, const Tensor4& target_onehot);

// Dice + cross entropy. Gradient is in the logits domain: the Dice part is
// mapped through the softmax Jacobian and added to the cross-entropy part.
LossGrad total_loss(const Tensor4& probs, const Tensor4& target_onehot, double dice_epsilon = 1e-5);

// Classical momentum on a flat array: v <- momentum*v - lr*g; w <- w + v.
void sgd_update(std::vector<double>& weights, const std::vector<double>& grads,
                std::vector<double>& velocity, double momentum, double lr);

// The same update applied across every tensor of a parameter set.
void sgd_step(UNetParams& params, const UNetParams& grads, UNetParams& velocity,
              const TrainHyper& hyper, double lr);

// lr0 * (1 - epoch/max_epochs)^poly_exponent; epoch must be in [0, max_epochs).
double poly_lr(int epoch, const TrainHyper& hyper);

}  // namespace demseg
