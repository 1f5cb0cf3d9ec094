#include "tsd/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "tsd/numeric/errors.hpp"

namespace tsd {

namespace {

double euclidean(const double* a, const double* b, std::size_t d) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

double visibility_distance(const EmbeddingRecord& q, const EmbeddingRecord& g, double threshold) {
    const std::size_t d = q.global.size(), p = q.visibility.size();
    if (g.global.size() != d || g.visibility.size() != p || q.parts.size() != p * d ||
        g.parts.size() != p * d) {
        throw DimensionError("visibility_distance: embeddings disagree in shape");
    }
    double total = euclidean(q.global.data(), g.global.data(), d);
    double count = 1.0;
    for (std::size_t i = 0; i < p; ++i) {
        if (q.visibility[i] >= threshold && g.visibility[i] >= threshold) {
            total += euclidean(q.parts.data() + i * d, g.parts.data() + i * d, d);
            count += 1.0;
        }
    }
    return total / count;
}

ItemLabel label_of(const EmbeddingRecord& r) {
    return {r.image_id, r.identity, r.camera, r.occlusion};
}

RankingRun make_run(std::vector<double> distances, std::span<const ItemLabel> queries,
                    std::span<const ItemLabel> gallery, const RunOptions& options) {
    RankingRun run;
    run.num_queries = queries.size();
    run.num_gallery = gallery.size();
    if (distances.size() != run.num_queries * run.num_gallery) {
        throw DimensionError("distance matrix is not queries x gallery");
    }
    for (double d : distances) {
        if (!(d >= 0.0) || !std::isfinite(d)) {
            throw ContractError("distances must be finite and non-negative");
        }
    }
    run.distances = std::move(distances);
    run.valid.assign(run.distances.size(), 1);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            const bool self = options.exclude_self && queries[q].image_id == gallery[g].image_id;
            const bool same_cam = options.exclude_same_camera &&
                                  queries[q].identity == gallery[g].identity &&
                                  queries[q].camera == gallery[g].camera;
            if (self || same_cam) run.valid[q * run.num_gallery + g] = 0;
        }
    }
    return run;
}

std::vector<double> distance_matrix(std::span<const EmbeddingRecord> queries,
                                    std::span<const EmbeddingRecord> gallery, double threshold) {
    std::vector<double> out(queries.size() * gallery.size());
    for (std::size_t q = 0; q < queries.size(); ++q)
        for (std::size_t g = 0; g < gallery.size(); ++g)
            out[q * gallery.size() + g] = visibility_distance(queries[q], gallery[g], threshold);
    return out;
}

CmcMap compute_cmc_map(const RankingRun& run, std::span<const std::uint8_t> good,
                       std::span<const std::uint8_t> ignore, std::size_t max_rank) {
    const std::size_t nq = run.num_queries, ng = run.num_gallery;
    if (good.size() != nq * ng || ignore.size() != nq * ng) {
        throw DimensionError("good/ignore flags must be queries x gallery");
    }
    if (max_rank == 0) throw ContractError("max_rank must be positive");
    CmcMap out;
    out.cmc.assign(max_rank, 0.0);
    double ap_sum = 0.0;
    std::vector<std::size_t> order;
    for (std::size_t q = 0; q < nq; ++q) {
        const std::size_t row = q * ng;
        order.clear();
        std::size_t positives = 0;
        for (std::size_t g = 0; g < ng; ++g) {
            if (good[row + g] && ignore[row + g]) {
                throw ContractError("a gallery item is both good and ignored");
            }
            if (!run.valid[row + g] || ignore[row + g]) continue;
            order.push_back(g);
            positives += good[row + g];
        }
        if (positives == 0) continue;
        std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
            return run.distances[row + a] < run.distances[row + b];
        });
        std::size_t hits = 0, first = 0;
        double ap = 0.0;
        for (std::size_t r = 0; r < order.size() && hits < positives; ++r) {
            if (!good[row + order[r]]) continue;
            if (hits++ == 0) first = r;
            ap += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        ap_sum += ap / static_cast<double>(positives);
        for (std::size_t k = first; k < max_rank; ++k) out.cmc[k] += 1.0;
        ++out.queries;
    }
    if (out.queries == 0) throw EmptyEvaluationError("no query has a correct match to rank");
    for (double& c : out.cmc) c /= static_cast<double>(out.queries);
    out.map = ap_sum / static_cast<double>(out.queries);
    return out;
}

std::string_view to_string(Family f) {
    switch (f) {
        case Family::All: return "all";
        case Family::Occ: return "occ";
        case Family::NPO: return "npo";
        case Family::NTP: return "ntp";
    }
    return "all";
}

void family_sets(Family family, std::span<const ItemLabel> queries,
                 std::span<const ItemLabel> gallery, std::vector<std::uint8_t>& good,
                 std::vector<std::uint8_t>& ignore) {
    const std::size_t ng = gallery.size();
    good.assign(queries.size() * ng, 0);
    ignore.assign(queries.size() * ng, 0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t g = 0; g < ng; ++g) {
            if (queries[q].identity != gallery[g].identity) continue;
            const Occlusion o = gallery[g].occlusion;
            bool is_good = false;
            switch (family) {
                case Family::All: is_good = true; break;
                case Family::Occ: is_good = is_occluded(o); break;
                case Family::NPO: is_good = o == Occlusion::NPO; break;
                case Family::NTP: is_good = o == Occlusion::NTP; break;
            }
            (is_good ? good : ignore)[q * ng + g] = 1;
        }
    }
}

FamilyMetrics& MetricReport::family(Family f) {
    return const_cast<FamilyMetrics&>(std::as_const(*this).family(f));
}

const FamilyMetrics& MetricReport::family(Family f) const {
    switch (f) {
        case Family::All: return all;
        case Family::Occ: return occ;
        case Family::NPO: return npo;
        case Family::NTP: return ntp;
    }
    return all;
}

MetricReport occluded_metrics(const RankingRun& run, std::span<const ItemLabel> queries,
                              std::span<const ItemLabel> gallery) {
    if (queries.size() != run.num_queries || gallery.size() != run.num_gallery) {
        throw DimensionError("labels do not match the ranking run");
    }
    std::unordered_set<std::int64_t> query_ids;
    for (const ItemLabel& q : queries) query_ids.insert(q.identity);
    for (const ItemLabel& g : gallery) {
        if (g.occlusion == Occlusion::Unlabeled && query_ids.contains(g.identity)) {
            throw ContractError("gallery item " + g.image_id + " has no occlusion label");
        }
    }
    MetricReport report;
    std::vector<std::uint8_t> good, ignore;
    for (Family f : {Family::All, Family::Occ, Family::NPO, Family::NTP}) {
        family_sets(f, queries, gallery, good, ignore);
        FamilyMetrics m;
        try {
            CmcMap r = compute_cmc_map(run, good, ignore, 10);
            m = {true, r.cmc[0], r.cmc[4], r.cmc[9], r.map, r.queries};
        } catch (const EmptyEvaluationError&) {
            m.evaluated = false;
        }
        report.family(f) = m;
    }
    return report;
}

MetricReport evaluate_embeddings(const EmbeddingSet& set, const Manifest& query,
                                 const Manifest& gallery, const RunOptions& options) {
    set.check();
    std::unordered_map<std::string, const EmbeddingRecord*> by_id;
    for (const EmbeddingRecord& r : set.records) by_id.emplace(r.image_id, &r);
    auto gather = [&](const Manifest& m, std::vector<EmbeddingRecord>& recs,
                      std::vector<ItemLabel>& labels) {
        for (const ManifestRecord& row : m) {
            auto it = by_id.find(row.image_id);
            if (it == by_id.end()) throw ValidationError("no embedding for image " + row.image_id);
            recs.push_back(*it->second);
            labels.push_back({row.image_id, row.identity, row.camera, row.occlusion});
        }
    };
    std::vector<EmbeddingRecord> qr, gr;
    std::vector<ItemLabel> ql, gl;
    gather(query, qr, ql);
    gather(gallery, gr, gl);
    RankingRun run = make_run(distance_matrix(qr, gr), ql, gl, options);
    return occluded_metrics(run, ql, gl);
}

std::string metric_report_json(const MetricReport& report, int indent) {
    nlohmann::ordered_json j;
    for (Family f : {Family::All, Family::Occ, Family::NPO, Family::NTP}) {
        const FamilyMetrics& m = report.family(f);
        nlohmann::ordered_json block;
        if (m.evaluated) {
            block["rank1"] = m.rank1;
            block["rank5"] = m.rank5;
            block["rank10"] = m.rank10;
            block["mAP"] = m.map;
        } else {
            block["rank1"] = nullptr;
            block["rank5"] = nullptr;
            block["rank10"] = nullptr;
            block["mAP"] = nullptr;
        }
        block["queries"] = m.queries;
        j[std::string(to_string(f))] = block;
    }
    return j.dump(indent);
}

}  // namespace tsd
