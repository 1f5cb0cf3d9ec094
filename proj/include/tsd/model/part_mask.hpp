#pragma once

#include <cstdint>
#include <vector>

namespace tsd {

/// Per-patch part assignment: 0 is background, 1..P are body parts.
struct PartLabelMap {
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Binary P×N matrix; at(p, i) is true when patch i belongs to part p
/// (zero-based part index, i.e. label p + 1).
class PartMask {
public:
    PartMask() = default;
    PartMask(std::size_t parts, std::size_t patches);

    static PartMask all_ones(std::size_t parts, std::size_t patches);
    static PartMask from_labels(const PartLabelMap& labels, std::size_t parts);

    std::size_t parts() const noexcept { return parts_; }
    std::size_t patches() const noexcept { return patches_; }
    bool at(std::size_t part, std::size_t patch) const { return bits_[part * patches_ + patch] != 0; }
    void set(std::size_t part, std::size_t patch, bool on);
    std::size_t row_count(std::size_t part) const;
    bool row_empty(std::size_t part) const { return row_count(part) == 0; }

    friend bool operator==(const PartMask&, const PartMask&) = default;

private:
    std::size_t parts_ = 0;
    std::size_t patches_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace tsd
