#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsd/data/manifest.hpp"
#include "tsd/model/part_mask.hpp"
#include "tsd/numeric/tensor.hpp"

namespace tsd {

/// Synthetic pedestrians: a person is a stack of P horizontal bands, each
/// drawn from a small per-band palette, standing on a noisy background.
struct SynthConfig {
    std::size_t train_identities = 16;
    std::size_t test_identities = 16;
    std::size_t images_per_identity = 12;
    /// Per test identity, this many images form the original query split.
    std::size_t query_images_per_identity = 3;
    std::size_t image_h = 32;
    std::size_t image_w = 16;
    std::size_t channels = 3;
    std::size_t patch = 4;
    std::size_t parts = 8;
    std::size_t person_columns = 3;  // patch columns covered by the person
    std::size_t palette = 4;         // textures per band
    std::size_t cameras = 4;
    double npo_rate = 0.25;
    double ntp_rate = 0.25;
    std::size_t min_occluded_bands = 2;
    std::size_t max_occluded_bands = 3;
    double noise = 0.1;
    double camera_shift = 0.2;
    std::uint64_t seed = 7;

    std::size_t grid_h() const { return image_h / patch; }
    std::size_t grid_w() const { return image_w / patch; }
    void validate() const;
};

struct SyntheticScene {
    std::string image_id;
    std::int64_t identity = 0;
    std::int64_t camera = 0;
    Split split = Split::Train;
    Occlusion occlusion = Occlusion::Holistic;
    Tensor image;         // [C, H, W]
    PartLabelMap labels;  // one label per patch, 0 = background or occluded
};

struct SyntheticDataset {
    std::vector<SyntheticScene> scenes;

    Manifest manifest() const;
    const SyntheticScene* find(const std::string& image_id) const;
};

SyntheticDataset generate_dataset(const SynthConfig& cfg);

// On disk: manifest.csv, images.bin (tensor container keyed by image id) and
// parts.txt with lines `image_id grid_h grid_w label...`.
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                  std::size_t grid_h, std::size_t grid_w);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace tsd
