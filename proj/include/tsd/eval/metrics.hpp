#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsd/data/manifest.hpp"
#include "tsd/eval/embeddings.hpp"

namespace tsd {

inline constexpr double kVisibilityThreshold = 0.5;

/// Visibility-gated mean of Euclidean distances over the global feature
/// (always counted) and every part visible in both images.
double visibility_distance(const EmbeddingRecord& q, const EmbeddingRecord& g,
                           double threshold = kVisibilityThreshold);

struct ItemLabel {
    std::string image_id;
    std::int64_t identity = 0;
    std::int64_t camera = 0;
    Occlusion occlusion = Occlusion::Unlabeled;
};

ItemLabel label_of(const EmbeddingRecord& r);

/// Row-major query × gallery distances plus per-pair validity. Invalid pairs
/// (the query itself, same identity seen by the same camera) take no part in
/// any metric.
struct RankingRun {
    std::size_t num_queries = 0;
    std::size_t num_gallery = 0;
    std::vector<double> distances;
    std::vector<std::uint8_t> valid;

    double distance(std::size_t q, std::size_t g) const { return distances[q * num_gallery + g]; }
    bool is_valid(std::size_t q, std::size_t g) const { return valid[q * num_gallery + g] != 0; }
};

struct RunOptions {
    bool exclude_same_camera = true;
    bool exclude_self = true;
};

RankingRun make_run(std::vector<double> distances, std::span<const ItemLabel> queries,
                    std::span<const ItemLabel> gallery, const RunOptions& options = {});

/// Distances between every query and gallery embedding.
std::vector<double> distance_matrix(std::span<const EmbeddingRecord> queries,
                                    std::span<const EmbeddingRecord> gallery,
                                    double threshold = kVisibilityThreshold);

struct CmcMap {
    std::vector<double> cmc;  // cmc[k-1] = rank-k accuracy
    double map = 0.0;
    std::size_t queries = 0;  // queries that had at least one good item
};

/// `good` and `ignore` are [Q × G] flags. Ignored and invalid items are
/// dropped from the ranking, ties go to the lower gallery index, and queries
/// without good items are skipped. Throws EmptyEvaluationError when every
/// query is skipped.
CmcMap compute_cmc_map(const RankingRun& run, std::span<const std::uint8_t> good,
                       std::span<const std::uint8_t> ignore, std::size_t max_rank = 10);

enum class Family { All, Occ, NPO, NTP };
std::string_view to_string(Family f);

/// Good and ignore flags of one metric family.
void family_sets(Family family, std::span<const ItemLabel> queries,
                 std::span<const ItemLabel> gallery, std::vector<std::uint8_t>& good,
                 std::vector<std::uint8_t>& ignore);

struct FamilyMetrics {
    bool evaluated = false;  // false when no query had a good item
    double rank1 = 0.0;
    double rank5 = 0.0;
    double rank10 = 0.0;
    double map = 0.0;
    std::size_t queries = 0;
};

struct MetricReport {
    FamilyMetrics all, occ, npo, ntp;

    const FamilyMetrics& family(Family f) const;
    FamilyMetrics& family(Family f);
};

/// All four families. Gallery items of query identities must carry
/// occlusion labels.
MetricReport occluded_metrics(const RankingRun& run, std::span<const ItemLabel> queries,
                              std::span<const ItemLabel> gallery);

/// Scores the manifest rows against `set`. Identity, camera and occlusion
/// come from the manifests; every row must have an embedding.
MetricReport evaluate_embeddings(const EmbeddingSet& set, const Manifest& query,
                                 const Manifest& gallery, const RunOptions& options = {});

std::string metric_report_json(const MetricReport& report, int indent = 2);

}  // namespace tsd
