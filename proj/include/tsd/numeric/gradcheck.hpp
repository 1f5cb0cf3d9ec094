#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tsd/numeric/checkpoint.hpp"

namespace tsd {

struct GradcheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor for the relative error, so tensors whose true
    /// gradient is ~0 are judged by absolute error instead.
    double scale_floor = 1e-6;
    /// 0 checks every entry; otherwise an evenly strided subset.
    std::size_t max_entries_per_tensor = 0;
};

struct TensorGradError {
    std::string name;
    double relative_error = 0.0;
    std::size_t entries_checked = 0;
};

struct GradcheckReport {
    std::string name;
    std::vector<TensorGradError> tensors;
    double max_relative_error = 0.0;
    bool passed = false;
};

/// Compares backward() of `loss_fn` against central finite differences for
/// every entry of `inputs`. Per tensor, the error is
///   |analytic - numeric|₂ / max(|analytic|₂, |numeric|₂, scale_floor).
/// `loss_fn` must be deterministic and rebuild its graph on every call.
GradcheckReport check_gradients(std::string name, const std::function<Tensor()>& loss_fn,
                                const std::vector<NamedTensor>& inputs,
                                const GradcheckOptions& options = {});

}  // namespace tsd
