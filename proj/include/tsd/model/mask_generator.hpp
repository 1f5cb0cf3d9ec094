#pragma once

#include <cstdint>
#include <vector>

#include "tsd/model/part_mask.hpp"
#include "tsd/numeric/checkpoint.hpp"
#include "tsd/numeric/random.hpp"
#include "tsd/numeric/tensor.hpp"

namespace tsd {

struct PartHeatmaps {
    Tensor logits;  // [B, N, P+1]
    Tensor probs;   // softmax of logits over the last axis; column 0 is background
};

struct PooledParts {
    Tensor parts;   // [B, P, D]
    Tensor concat;  // [B, P·D]
};

struct BinarizedParts {
    std::vector<PartMask> masks;
    std::vector<PartLabelMap> labels;
};

/// Linear per-patch classifier over P parts plus background.
class MaskGenerator {
public:
    MaskGenerator() = default;
    MaskGenerator(std::size_t parts, std::size_t dim, Rng& rng);

    /// patches [B, N, D] (or [N, D]) -> heatmaps.
    PartHeatmaps heatmaps(const Tensor& patches) const;

    std::size_t parts() const noexcept { return parts_; }
    void collect(ParameterSet& params, const std::string& prefix) const;

    Tensor weight;  // G, [(P+1), D]

private:
    std::size_t parts_ = 0;
};

/// Per-patch argmax (ties go to the lowest class) and the matching hard masks.
BinarizedParts binarize(const PartHeatmaps& h);

/// Heatmap-weighted foreground part features.
PooledParts pool_parts(const Tensor& patches, const PartHeatmaps& h);

/// v̂_p = 1 when part p covers at least one patch and at least
/// `min_fraction` of all patches.
std::vector<std::uint8_t> visibility_labels(const PartLabelMap& labels, std::size_t parts,
                                            double min_fraction = 0.0);

/// Clears the visibility label of every part whose mask row is empty.
void suppress_empty_parts(const PartMask& mask, std::vector<std::uint8_t>& visibility);

}  // namespace tsd
