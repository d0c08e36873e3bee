#include "demseg/loss.hpp"

#include <cmath>

namespace demseg {

LossGrad dice_loss(const Tensor4& probs, const Tensor4& target_onehot, double epsilon) {
    require_same_shape(probs, target_onehot, "dice_loss");
    if (probs.c < 2)
        throw std::invalid_argument("dice_loss: need at least 2 classes");

    LossGrad out;
    out.grad = Tensor4(probs.n, probs.c, probs.h, probs.w);
    const std::size_t plane = static_cast<std::size_t>(probs.h) * probs.w;
    const int fg_classes = probs.c - 1;

    double dice_sum = 0.0;
    for (int c = 1; c < probs.c; ++c) {
        double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
        for (int n = 0; n < probs.n; ++n) {
            const double* p = probs.plane(n, c);
            const double* g = target_onehot.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                inter += p[i] * g[i];
                sum_p += p[i];
                sum_g += g[i];
            }
        }
        const double num = 2.0 * inter + epsilon;
        const double den = sum_p + sum_g + epsilon;
        dice_sum += num / den;
        // d(num/den)/dp_i = (2*g_i*den - num) / den^2
        const double inv_den2 = 1.0 / (den * den);
        for (int n = 0; n < probs.n; ++n) {
            const double* g = target_onehot.plane(n, c);
            double* gr = out.grad.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i)
                gr[i] = -(2.0 * g[i] * den - num) * inv_den2 / fg_classes;
        }
    }
    out.loss = 1.0 - dice_sum / fg_classes;
    return out;
}

LossGrad cross_entropy(const Tensor4& probs, const Tensor4& target_onehot) {
    require_same_shape(probs, target_onehot, "cross_entropy");
    constexpr double kClamp = 1e-12;
    LossGrad out;
    out.grad = Tensor4(probs.n, probs.c, probs.h, probs.w);
    const double voxels = static_cast<double>(probs.n) * probs.h * probs.w;
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.v.size(); ++i) {
        if (target_onehot.v[i] > 0.0)
            loss -= target_onehot.v[i] * std::log(std::max(probs.v[i], kClamp));
        out.grad.v[i] = (probs.v[i] - target_onehot.v[i]) / voxels;
    }
    out.loss = loss / voxels;
    return out;
}

LossGrad total_loss(const Tensor4& probs, const Tensor4& target_onehot, double dice_epsilon) {
    LossGrad dice = dice_loss(probs, target_onehot, dice_epsilon);
    LossGrad ce = cross_entropy(probs, target_onehot);
    LossGrad out;
    out.loss = dice.loss + ce.loss;
    out.grad = softmax_backward(probs, dice.grad);
    for (std::size_t i = 0; i < out.grad.v.size(); ++i)
        out.grad.v[i] += ce.grad.v[i];
    return out;
}

void sgd_update(std::vector<double>& weights, const std::vector<double>& grads,
                std::vector<double>& velocity, double momentum, double lr) {
    if (weights.size() != grads.size() || weights.size() != velocity.size())
        throw std::invalid_argument("sgd_update: size mismatch");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = momentum * velocity[i] - lr * grads[i];
        weights[i] += velocity[i];
    }
}

void sgd_step(UNetParams& params, const UNetParams& grads, UNetParams& velocity,
              const TrainHyper& hyper, double lr) {
    if (!(params.config == grads.config) || !(params.config == velocity.config))
        throw std::invalid_argument("sgd_step: parameter/gradient config mismatch");
    // collect matching arrays by manifest position
    std::vector<std::vector<double>*> ws, vs;
    std::vector<const std::vector<double>*> gs;
    params.for_each_array([&](const std::string&, std::vector<double>& d,
                              const std::vector<int>&) { ws.push_back(&d); });
    velocity.for_each_array([&](const std::string&, std::vector<double>& d,
                                const std::vector<int>&) { vs.push_back(&d); });
    grads.for_each_array([&](const std::string&, const std::vector<double>& d,
                             const std::vector<int>&) { gs.push_back(&d); });
    for (std::size_t i = 0; i < ws.size(); ++i)
        sgd_update(*ws[i], *gs[i], *vs[i], hyper.momentum, lr);
}

double poly_lr(int epoch, const TrainHyper& hyper) {
    if (!hyper.valid())
        throw std::invalid_argument("poly_lr: invalid hyperparameters");
    if (epoch < 0 || epoch >= hyper.max_epochs)
        throw std::out_of_range("poly_lr: epoch out of range");
    return hyper.lr0 *
           std::pow(1.0 - static_cast<double>(epoch) / hyper.max_epochs, hyper.poly_exponent);
}

}  // namespace demseg
