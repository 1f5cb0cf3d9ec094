#include "tsd/numeric/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tsd/numeric/errors.hpp"

namespace tsd {

GradcheckReport check_gradients(std::string name, const std::function<Tensor()>& loss_fn,
                                const std::vector<NamedTensor>& inputs,
                                const GradcheckOptions& options) {
    GradcheckReport report;
    report.name = std::move(name);

    for (const NamedTensor& in : inputs) {
        Tensor t = in.tensor;
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor loss = loss_fn();
    if (loss.numel() != 1) throw ContractError("gradcheck: loss must be scalar");
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const NamedTensor& in : inputs) {
        if (in.tensor.has_grad()) {
            analytic.emplace_back(in.tensor.grad().begin(), in.tensor.grad().end());
        } else {
            analytic.emplace_back(in.tensor.numel(), 0.0);
        }
    }

    NoGradGuard no_grad;
    bool ok = true;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor param = inputs[t].tensor;
        auto values = param.mutable_values();
        const std::size_t n = values.size();
        std::size_t stride = 1;
        if (options.max_entries_per_tensor > 0 && n > options.max_entries_per_tensor) {
            stride = (n + options.max_entries_per_tensor - 1) / options.max_entries_per_tensor;
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        std::size_t checked = 0;
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = loss_fn().item();
            values[i] = saved - options.step;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[t][i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            ++checked;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), options.scale_floor});
        const double rel = std::sqrt(diff2) / denom;
        report.tensors.push_back({inputs[t].name, rel, checked});
        report.max_relative_error = std::max(report.max_relative_error, rel);
        ok = ok && rel < options.tolerance;
    }
    report.passed = ok;
    return report;
}

}  // namespace tsd
