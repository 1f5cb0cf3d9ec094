#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tsd/numeric/tensor.hpp"

namespace tsd {

using Rng = std::mt19937_64;

/// Normal(0, std) samples redrawn until they fall within ±2·std.
Tensor truncated_normal(const Shape& shape, double std, Rng& rng, bool requires_grad = true);

/// Glorot-uniform weights for a [fan_in, fan_out] matrix.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, bool requires_grad = true);

/// Uniform integer in [0, bound), unbiased.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

/// Fisher-Yates shuffle driven only by uniform_index, so results depend on
/// the seed alone and not on the standard library's shuffle.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace tsd
