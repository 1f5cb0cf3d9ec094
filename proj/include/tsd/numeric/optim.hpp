#pragma once

#include <span>
#include <vector>

#include "tsd/numeric/tensor.hpp"

namespace tsd {

struct SgdConfig {
    double lr = 0.004;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// One classic-momentum update of a flat parameter buffer.
///   g' = g + weight_decay·p;  v = momentum·v + g';  p -= lr·v
void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
              double lr, double momentum, double weight_decay);

/// Half-cosine decay from `base_lr` at epoch 0 to 0 at `total_epochs`.
double cosine_lr(double base_lr, double epoch, double total_epochs);

class Sgd {
public:
    Sgd(std::vector<Tensor> params, SgdConfig config);

    /// Applies one step at learning rate `lr`. Parameters without a gradient
    /// are left untouched.
    void step(double lr);
    void zero_grad();
    const SgdConfig& config() const noexcept { return config_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    SgdConfig config_;
};

}  // namespace tsd
