#include "tsd/model/part_mask.hpp"

#include <algorithm>
#include <string>

#include "tsd/numeric/errors.hpp"

namespace tsd {

PartMask::PartMask(std::size_t parts, std::size_t patches)
    : parts_(parts), patches_(patches), bits_(parts * patches, 0) {}

PartMask PartMask::all_ones(std::size_t parts, std::size_t patches) {
    PartMask m(parts, patches);
    std::ranges::fill(m.bits_, 1);
    return m;
}

PartMask PartMask::from_labels(const PartLabelMap& labels, std::size_t parts) {
    PartMask m(parts, labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels.labels[i];
        if (l < 0 || static_cast<std::size_t>(l) > parts) {
            throw ValidationError("part label " + std::to_string(l) + " outside 0.." +
                                  std::to_string(parts));
        }
        if (l > 0) m.set(static_cast<std::size_t>(l - 1), i, true);
    }
    return m;
}

void PartMask::set(std::size_t part, std::size_t patch, bool on) {
    bits_.at(part * patches_ + patch) = on ? 1 : 0;
}

std::size_t PartMask::row_count(std::size_t part) const {
    const auto first = bits_.begin() + static_cast<std::ptrdiff_t>(part * patches_);
    return static_cast<std::size_t>(
        std::count(first, first + static_cast<std::ptrdiff_t>(patches_), std::uint8_t{1}));
}

}  // namespace tsd
