#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tsd/eval/metrics.hpp"

// Brute-force retrieval metrics that never sort: the rank of a correct match
// is one plus the number of admissible items ahead of it.
namespace tsd::testing {

struct OracleFamily {
    bool evaluated = false;
    double rank1 = 0, rank5 = 0, rank10 = 0, map = 0;
    std::size_t queries = 0;
};

inline bool oracle_admissible(const ItemLabel& q, const ItemLabel& g, bool same_camera_rule) {
    if (q.image_id == g.image_id) return false;
    if (same_camera_rule && q.identity == g.identity && q.camera == g.camera) return false;
    return true;
}

/// Which same-identity gallery items count as correct (1), are removed (2),
/// for one family; different identities stay as negatives (0).
inline int oracle_role(int family, const ItemLabel& q, const ItemLabel& g) {
    if (q.identity != g.identity) return 0;
    const bool npo = g.occlusion == Occlusion::NPO, ntp = g.occlusion == Occlusion::NTP;
    bool good = true;
    if (family == 1) good = npo || ntp;
    if (family == 2) good = npo;
    if (family == 3) good = ntp;
    return good ? 1 : 2;
}

inline OracleFamily oracle_family(int family, const std::vector<double>& dist,
                                  const std::vector<ItemLabel>& queries,
                                  const std::vector<ItemLabel>& gallery, bool same_camera_rule) {
    const std::size_t ng = gallery.size();
    OracleFamily out;
    double ap_total = 0, r1 = 0, r5 = 0, r10 = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<std::size_t> ranks;
        for (std::size_t g = 0; g < ng; ++g) {
            if (!oracle_admissible(queries[q], gallery[g], same_camera_rule)) continue;
            if (oracle_role(family, queries[q], gallery[g]) != 1) continue;
            std::size_t ahead = 0;
            for (std::size_t h = 0; h < ng; ++h) {
                if (h == g || !oracle_admissible(queries[q], gallery[h], same_camera_rule)) continue;
                if (oracle_role(family, queries[q], gallery[h]) == 2) continue;
                const double dh = dist[q * ng + h], dg = dist[q * ng + g];
                if (dh < dg || (dh == dg && h < g)) ++ahead;
            }
            ranks.push_back(ahead + 1);
        }
        if (ranks.empty()) continue;
        std::sort(ranks.begin(), ranks.end());
        double ap = 0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            ap += static_cast<double>(i + 1) / static_cast<double>(ranks[i]);
        }
        ap_total += ap / static_cast<double>(ranks.size());
        r1 += ranks[0] <= 1;
        r5 += ranks[0] <= 5;
        r10 += ranks[0] <= 10;
        ++out.queries;
    }
    if (out.queries == 0) return out;
    const double n = static_cast<double>(out.queries);
    out.evaluated = true;
    out.rank1 = r1 / n;
    out.rank5 = r5 / n;
    out.rank10 = r10 / n;
    out.map = ap_total / n;
    return out;
}

struct RandomRetrieval {
    std::vector<ItemLabel> queries;
    std::vector<ItemLabel> gallery;
    std::vector<double> distances;
};

/// Random labels and distances; quantized distances create frequent ties,
/// and some queries are copied into the gallery to exercise self-exclusion.
inline RandomRetrieval random_retrieval(std::mt19937_64& rng, std::size_t max_queries = 50,
                                        std::size_t max_gallery = 200) {
    std::uniform_int_distribution<std::size_t> nq_d(1, max_queries), ng_d(2, max_gallery);
    const std::size_t nq = nq_d(rng), ng = std::max<std::size_t>(ng_d(rng), nq);
    std::uniform_int_distribution<std::int64_t> id_d(0, 9), cam_d(0, 3);
    std::uniform_int_distribution<int> occ_d(0, 2), dist_d(0, 40);
    RandomRetrieval r;
    for (std::size_t g = 0; g < ng; ++g) {
        r.gallery.push_back({"g" + std::to_string(g), id_d(rng), cam_d(rng),
                             static_cast<Occlusion>(occ_d(rng))});
    }
    for (std::size_t q = 0; q < nq; ++q) {
        if (q % 3 == 0) {
            r.queries.push_back(r.gallery[q]);
        } else {
            r.queries.push_back({"q" + std::to_string(q), id_d(rng), cam_d(rng),
                                 static_cast<Occlusion>(occ_d(rng))});
        }
    }
    r.distances.resize(nq * ng);
    for (double& d : r.distances) d = dist_d(rng) * 0.125;
    return r;
}

}  // namespace tsd::testing
