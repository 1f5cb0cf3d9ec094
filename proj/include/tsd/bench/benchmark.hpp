#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tsd/data/manifest.hpp"

namespace tsd {

struct BenchmarkSplit {
    Manifest train;
    Manifest gallery;  // original query followed by original gallery, split = gallery
    Manifest query;    // sampled holistic images, split = query
    std::uint64_t seed = 0;
    std::string input_hash;  // SHA-256 of the input manifest's CSV form
};

inline constexpr std::size_t kQueriesPerIdentity = 5;

/// Merges query and gallery into one gallery and samples up to
/// `per_identity` annotated holistic images of every original-query
/// identity as the new query set. Throws ValidationError when a
/// query-identity image lacks an occlusion label.
BenchmarkSplit build_benchmark(const Manifest& manifest, std::uint64_t seed,
                               std::size_t per_identity = kQueriesPerIdentity);

struct SplitReport {
    std::vector<std::string> violations;
    std::map<std::int64_t, std::size_t> queries_per_identity;
    std::map<std::string, std::size_t> gallery_occlusion;
    std::map<std::string, std::size_t> query_occlusion;
    std::size_t gallery_identities = 0;

    bool ok() const noexcept { return violations.empty(); }
};

SplitReport validate_split(const BenchmarkSplit& split,
                           std::size_t per_identity = kQueriesPerIdentity);

std::string sha256_hex(const std::string& bytes);
std::string manifest_hash(const Manifest& manifest);

/// Writes train.csv, gallery.csv, query.csv and provenance.json to `dir`.
void write_split(const std::filesystem::path& dir, const BenchmarkSplit& split);

}  // namespace tsd
