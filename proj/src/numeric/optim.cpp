#include "tsd/numeric/optim.hpp"

#include <cmath>
#include <numbers>

#include "tsd/numeric/errors.hpp"

namespace tsd {

void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              double lr, double momentum, double weight_decay) {
    if (!(lr > 0)) throw ContractError("sgd_step: learning rate must be positive");
    if (param.size() != grad.size() || param.size() != velocity.size()) {
        throw DimensionError("sgd_step: parameter, gradient and velocity sizes differ");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

double cosine_lr(double base_lr, double epoch, double total_epochs) {
    if (!(total_epochs > 0)) throw ContractError("cosine_lr: total epochs must be positive");
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

Sgd::Sgd(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
    velocity_.reserve(params_.size());
    for (const Tensor& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        sgd_step(p.mutable_values(), p.grad(), velocity_[i], lr, config_.momentum,
                 config_.weight_decay);
    }
}

void Sgd::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace tsd
