#include "tsd/numeric/random.hpp"

#include <cmath>

#include "tsd/numeric/errors.hpp"

namespace tsd {

Tensor truncated_normal(const Shape& shape, double std, Rng& rng, bool requires_grad) {
    std::normal_distribution<double> normal(0.0, std);
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
        do {
            v = normal(rng);
        } while (std::abs(v) > 2.0 * std);
    }
    return Tensor(shape, std::move(values), requires_grad);
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool requires_grad) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    std::vector<double> values(fan_in * fan_out);
    for (double& v : values) v = uniform(rng);
    return Tensor(Shape{fan_in, fan_out}, std::move(values), requires_grad);
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
    if (bound == 0) throw ContractError("uniform_index: empty range");
    const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
    std::uint64_t x = 0;
    do {
        x = rng();
    } while (x > limit);
    return x % bound;
}

}  // namespace tsd
