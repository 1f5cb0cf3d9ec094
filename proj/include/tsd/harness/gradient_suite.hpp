#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tsd/numeric/gradcheck.hpp"

namespace tsd {

struct GradientCase {
    GradcheckReport report;
    /// Largest |gradient| of the attention key biases, which must be zero:
    /// softmax is invariant to a per-query constant in its logits.
    double key_bias_grad = 0.0;
    double seconds = 0.0;

    bool passed() const { return report.passed && key_bias_grad < 1e-12; }
};

struct GradientSuiteResult {
    std::vector<GradientCase> cases;
    double seconds = 0.0;

    bool passed() const;
    double max_relative_error() const;
};

/// Finite-difference checks of every differentiable operation, each model
/// component, and the full forward pass plus summed objective of the
/// richest variant. `on_case` is called after each check.
GradientSuiteResult run_gradient_suite(std::uint64_t seed = 2024,
                                       const std::function<void(const GradientCase&)>& on_case = {});

}  // namespace tsd
