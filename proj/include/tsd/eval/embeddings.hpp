#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsd/data/manifest.hpp"

namespace tsd {

/// Inference features of one image.
struct EmbeddingRecord {
    std::string image_id;
    std::int64_t identity = 0;
    std::int64_t camera = 0;
    Occlusion occlusion = Occlusion::Unlabeled;
    std::vector<double> global;      // D
    std::vector<double> parts;       // P·D, part-major
    std::vector<double> visibility;  // P probabilities
};

struct EmbeddingSet {
    std::size_t dim = 0;
    std::size_t parts = 0;
    std::vector<EmbeddingRecord> records;

    /// Throws DimensionError when a record disagrees with dim/parts.
    void check() const;
    const EmbeddingRecord* find(const std::string& image_id) const;
};

// Binary container, little-endian:
//   magic "TSDEMBD\0" | u32 version | u32 dim | u32 parts | u64 count
//   per record: u32 id_len | id | i64 identity | i64 camera | u8 occlusion |
//               f64 global[D] | f64 parts[P·D] | f64 visibility[P]
// The text index next to it (`<file>.index`) lists one line per record:
//   image_id identity camera occlusion byte_offset
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);
std::filesystem::path embedding_index_path(const std::filesystem::path& path);

}  // namespace tsd
