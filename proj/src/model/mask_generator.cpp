#include "tsd/model/mask_generator.hpp"

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

MaskGenerator::MaskGenerator(std::size_t parts, std::size_t dim, Rng& rng) : parts_(parts) {
    if (parts == 0 || dim == 0) throw ContractError("mask generator: sizes must be positive");
    weight = truncated_normal({parts + 1, dim}, 0.02, rng);
}

PartHeatmaps MaskGenerator::heatmaps(const Tensor& patches) const {
    Tensor x = patches.rank() == 2 ? reshape(patches, {1, patches.dim(0), patches.dim(1)})
                                   : patches;
    if (x.rank() != 3 || x.dim(2) != weight.dim(1)) {
        throw DimensionError("mask generator expects patches [B, N, " +
                             std::to_string(weight.dim(1)) + "], got " +
                             shape_string(patches.shape()));
    }
    PartHeatmaps h;
    h.logits = matmul_transposed(x, weight);
    h.probs = softmax(h.logits, -1);
    return h;
}

void MaskGenerator::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + "weight", weight);
}

BinarizedParts binarize(const PartHeatmaps& h) {
    const Tensor& m = h.probs;
    if (m.rank() != 3 || m.dim(2) < 2) throw DimensionError("binarize expects [B, N, P+1]");
    const std::size_t b = m.dim(0), n = m.dim(1), k = m.dim(2);
    const auto v = m.values();
    BinarizedParts out;
    out.masks.reserve(b);
    out.labels.reserve(b);
    for (std::size_t s = 0; s < b; ++s) {
        PartLabelMap labels;
        labels.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = v.data() + (s * n + i) * k;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (row[c] > row[best]) best = c;
            }
            labels.labels[i] = static_cast<int>(best);
        }
        out.masks.push_back(PartMask::from_labels(labels, k - 1));
        out.labels.push_back(std::move(labels));
    }
    return out;
}

PooledParts pool_parts(const Tensor& patches, const PartHeatmaps& h) {
    Tensor x = patches.rank() == 2 ? reshape(patches, {1, patches.dim(0), patches.dim(1)})
                                   : patches;
    PooledParts out;
    out.parts = part_pool(x, h.probs);
    out.concat = reshape(out.parts, {out.parts.dim(0), out.parts.dim(1) * out.parts.dim(2)});
    return out;
}

std::vector<std::uint8_t> visibility_labels(const PartLabelMap& labels, std::size_t parts,
                                            double min_fraction) {
    std::vector<std::size_t> counts(parts + 1, 0);
    for (int l : labels.labels) {
        if (l < 0 || static_cast<std::size_t>(l) > parts) {
            throw ValidationError("part label " + std::to_string(l) + " outside 0.." +
                                  std::to_string(parts));
        }
        ++counts[static_cast<std::size_t>(l)];
    }
    const double needed = min_fraction * static_cast<double>(labels.size());
    std::vector<std::uint8_t> v(parts, 0);
    for (std::size_t p = 0; p < parts; ++p) {
        const std::size_t c = counts[p + 1];
        v[p] = c > 0 && static_cast<double>(c) >= needed ? 1 : 0;
    }
    return v;
}

void suppress_empty_parts(const PartMask& mask, std::vector<std::uint8_t>& visibility) {
    if (visibility.size() != mask.parts()) {
        throw DimensionError("visibility length differs from mask part count");
    }
    for (std::size_t p = 0; p < mask.parts(); ++p) {
        if (mask.row_empty(p)) visibility[p] = 0;
    }
}

}  // namespace tsd
