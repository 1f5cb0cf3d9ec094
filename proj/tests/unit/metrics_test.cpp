#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "support/metric_oracle.hpp"
#include "tsd/eval/embeddings.hpp"
#include "tsd/eval/metrics.hpp"
#include "tsd/numeric/errors.hpp"

using namespace tsd;
using namespace tsd::testing;

namespace {

EmbeddingRecord random_record(std::mt19937_64& rng, std::size_t d, std::size_t p) {
    std::uniform_real_distribution<double> u(-1, 1), v(0, 1);
    EmbeddingRecord r;
    r.global.resize(d);
    r.parts.resize(p * d);
    r.visibility.resize(p);
    for (double& x : r.global) x = u(rng);
    for (double& x : r.parts) x = u(rng);
    for (double& x : r.visibility) x = v(rng);
    return r;
}

double l2(const double* a, const double* b, std::size_t d) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// single query, each gallery item a distinct camera
RankingRun one_query(const std::vector<double>& d) {
    std::vector<ItemLabel> q{{"q", 0, 99, Occlusion::Holistic}}, g;
    for (std::size_t i = 0; i < d.size(); ++i) {
        g.push_back({"g" + std::to_string(i), 0, static_cast<std::int64_t>(i), Occlusion::Holistic});
    }
    return make_run(d, q, g);
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("tsd_metrics_" + name);
}

}  // namespace

TEST_CASE("visibility distance special cases") {
    EmbeddingRecord a, b;
    a.global = {0, 0};
    b.global = {3, 4};
    a.parts = {0, 0, 1, 1};
    b.parts = {5, 0, 1, 6};
    a.visibility = {0.9, 0.6};
    b.visibility = {0.7, 0.5};
    CHECK(visibility_distance(a, b) == doctest::Approx(5.0));  // every distance is 5

    b.visibility = {0.2, 0.1};
    CHECK(visibility_distance(a, b) == 5.0);  // global only
    b.parts = {1, 1, 1, 1};
    CHECK(visibility_distance(a, b) == 5.0);

    EmbeddingRecord c = b;
    c.parts.pop_back();
    CHECK_THROWS_AS(visibility_distance(a, c), DimensionError);
}

TEST_CASE("visibility distance matches the loop oracle and is symmetric") {
    std::mt19937_64 rng(4);
    const std::size_t d = 5, p = 4;
    for (int trial = 0; trial < 500; ++trial) {
        EmbeddingRecord q = random_record(rng, d, p), g = random_record(rng, d, p);
        double num = l2(q.global.data(), g.global.data(), d), den = 1;
        for (std::size_t i = 0; i < p; ++i) {
            const double vq = q.visibility[i] >= 0.5 ? 1 : 0, vg = g.visibility[i] >= 0.5 ? 1 : 0;
            num += vq * vg * l2(q.parts.data() + i * d, g.parts.data() + i * d, d);
            den += vq * vg;
        }
        CHECK(std::abs(visibility_distance(q, g) - num / den) <= 1e-12);
        CHECK(visibility_distance(q, g) == visibility_distance(g, q));
    }
}

TEST_CASE("hand AP cases") {
    // [pos, neg, pos] at 0.1 < 0.2 < 0.3
    RankingRun run = one_query({0.1, 0.2, 0.3});
    std::vector<std::uint8_t> good{1, 0, 1}, none(3, 0);
    CmcMap r = compute_cmc_map(run, good, none);
    CHECK(r.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
    CHECK(r.map == doctest::Approx(0.8333).epsilon(1e-4));
    CHECK(r.cmc[0] == 1.0);

    std::vector<std::uint8_t> single{1, 0, 0};
    r = compute_cmc_map(run, single, none);
    CHECK(r.map == 1.0);
    for (double c : r.cmc) CHECK(c == 1.0);

    // positive at rank 1 ignored, next positive at raw rank 3 -> rank 2
    std::vector<std::uint8_t> good2{0, 0, 1}, ignore{1, 0, 0};
    r = compute_cmc_map(run, good2, ignore);
    CHECK(r.map == 0.5);
    CHECK(r.cmc[0] == 0.0);
    CHECK(r.cmc[1] == 1.0);
}

TEST_CASE("ties break by gallery index") {
    RankingRun run = one_query({0.5, 0.5, 0.5});
    std::vector<std::uint8_t> good{0, 0, 1}, none(3, 0);
    CHECK(compute_cmc_map(run, good, none).map == doctest::Approx(1.0 / 3.0));
    std::vector<std::uint8_t> first{1, 0, 0};
    CHECK(compute_cmc_map(run, first, none).map == 1.0);
}

TEST_CASE("contract errors") {
    RankingRun run = one_query({0.1, 0.2});
    std::vector<std::uint8_t> none(2, 0), both{1, 0};
    CHECK_THROWS_AS(compute_cmc_map(run, none, none), EmptyEvaluationError);
    CHECK_THROWS_AS(compute_cmc_map(run, both, both), ContractError);
    std::vector<ItemLabel> q{{"q", 0, 0, Occlusion::Holistic}};
    std::vector<ItemLabel> g{{"g", 0, 1, Occlusion::Unlabeled}};
    RankingRun r2 = make_run({0.3}, q, g);
    CHECK_THROWS_AS(occluded_metrics(r2, q, g), ContractError);
    CHECK_THROWS_AS(make_run({-1.0}, q, g), ContractError);
}

TEST_CASE("self and same-camera exclusions") {
    std::vector<ItemLabel> q{{"a", 1, 0, Occlusion::Holistic}};
    std::vector<ItemLabel> g{{"a", 1, 0, Occlusion::Holistic},
                             {"b", 1, 0, Occlusion::NPO},
                             {"c", 2, 0, Occlusion::Holistic},
                             {"d", 1, 1, Occlusion::Holistic}};
    RankingRun run = make_run({0.0, 0.1, 0.2, 0.3}, q, g);
    CHECK(run.valid == std::vector<std::uint8_t>{0, 0, 1, 1});
    RunOptions keep_camera;
    keep_camera.exclude_same_camera = false;
    RankingRun run2 = make_run({0.0, 0.1, 0.2, 0.3}, q, g, keep_camera);
    CHECK(run2.valid == std::vector<std::uint8_t>{0, 1, 1, 1});

    MetricReport m = occluded_metrics(run, q, g);
    CHECK(m.all.map == 0.5);  // "d" behind the negative "c"
    CHECK_FALSE(m.occ.evaluated);  // the NPO match is same-camera
    MetricReport m2 = occluded_metrics(run2, q, g);
    CHECK(m2.occ.rank1 == 1.0);
}

TEST_CASE("holistic positives are removed in the occluded family") {
    std::vector<ItemLabel> q{{"q", 7, 0, Occlusion::Holistic}};
    std::vector<ItemLabel> g{{"h", 7, 1, Occlusion::Holistic},
                             {"n", 3, 2, Occlusion::Holistic},
                             {"o", 7, 3, Occlusion::NPO}};
    RankingRun run = make_run({0.1, 0.2, 0.3}, q, g);
    MetricReport m = occluded_metrics(run, q, g);
    CHECK(m.all.rank1 == 1.0);
    CHECK(m.occ.rank1 == 0.0);
    CHECK(m.occ.rank5 == 1.0);
    CHECK(m.occ.map == 0.5);
    CHECK(m.npo.map == 0.5);
    CHECK_FALSE(m.ntp.evaluated);

    std::vector<ItemLabel> g2{{"h", 7, 1, Occlusion::Holistic}, {"n", 3, 2, Occlusion::NTP}};
    RankingRun run2 = make_run({0.1, 0.2}, q, g2);
    MetricReport m2 = occluded_metrics(run2, q, g2);
    CHECK(m2.all.evaluated);
    CHECK_FALSE(m2.occ.evaluated);
    CHECK(m2.occ.queries == 0);
}

TEST_CASE("all families match the brute-force evaluator") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        RandomRetrieval r = random_retrieval(rng);
        RankingRun run = make_run(r.distances, r.queries, r.gallery);
        MetricReport m = occluded_metrics(run, r.queries, r.gallery);
        for (int f = 0; f < 4; ++f) {
            const FamilyMetrics& got = m.family(static_cast<Family>(f));
            OracleFamily o = oracle_family(f, r.distances, r.queries, r.gallery, true);
            REQUIRE(got.evaluated == o.evaluated);
            CHECK(got.queries == o.queries);
            CHECK(got.map == o.map);
            CHECK(got.rank1 == o.rank1);
            CHECK(got.rank5 == o.rank5);
            CHECK(got.rank10 == o.rank10);
        }
    }
}

TEST_CASE("metric invariants") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        RandomRetrieval r = random_retrieval(rng, 20, 60);
        RankingRun run = make_run(r.distances, r.queries, r.gallery);
        MetricReport base = occluded_metrics(run, r.queries, r.gallery);

        // positive scaling
        std::vector<double> scaled = r.distances;
        for (double& d : scaled) d *= 3.7;
        MetricReport s = occluded_metrics(make_run(scaled, r.queries, r.gallery), r.queries, r.gallery);

        // extra holistic same-id items are ignored by OCC/NPO/NTP; ranked anywhere
        std::vector<ItemLabel> gal = r.gallery;
        const std::size_t ng = gal.size(), extra = 5;
        for (std::size_t e = 0; e < extra; ++e) {
            gal.push_back({"x" + std::to_string(e), r.queries[0].identity, 100 + static_cast<std::int64_t>(e),
                           Occlusion::Holistic});
        }
        std::vector<double> dist;
        std::uniform_real_distribution<double> u(0, 5);
        for (std::size_t q = 0; q < r.queries.size(); ++q) {
            for (std::size_t g = 0; g < ng; ++g) dist.push_back(r.distances[q * ng + g]);
            for (std::size_t e = 0; e < extra; ++e) dist.push_back(u(rng));
        }
        std::vector<ItemLabel> only_first(r.queries.begin(), r.queries.begin() + 1);
        std::vector<double> first_row(dist.begin(), dist.begin() + gal.size());
        std::vector<double> base_row(r.distances.begin(), r.distances.begin() + ng);
        MetricReport with = occluded_metrics(make_run(first_row, only_first, gal), only_first, gal);
        MetricReport without = occluded_metrics(make_run(base_row, only_first, r.gallery), only_first,
                                                r.gallery);

        for (Family f : {Family::All, Family::Occ, Family::NPO, Family::NTP}) {
            const FamilyMetrics& b = base.family(f);
            CHECK(b.map == s.family(f).map);
            CHECK(b.rank1 == s.family(f).rank1);
            for (double v : {b.rank1, b.rank5, b.rank10, b.map}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(b.rank1 <= b.rank5);
            CHECK(b.rank5 <= b.rank10);
            if (f != Family::All) {
                CHECK(with.family(f).evaluated == without.family(f).evaluated);
                CHECK(with.family(f).map == without.family(f).map);
                CHECK(with.family(f).rank1 == without.family(f).rank1);
            }
        }
    }
}

TEST_CASE("metric report JSON") {
    std::vector<ItemLabel> q{{"q", 7, 0, Occlusion::Holistic}};
    std::vector<ItemLabel> g{{"h", 7, 1, Occlusion::Holistic}, {"o", 7, 3, Occlusion::NPO}};
    MetricReport m = occluded_metrics(make_run({0.1, 0.3}, q, g), q, g);
    auto j = nlohmann::json::parse(metric_report_json(m));
    CHECK(j["all"]["mAP"].get<double>() == 1.0);
    CHECK(j["occ"]["rank1"].get<double>() == 1.0);
    CHECK(j["ntp"]["mAP"].is_null());
    CHECK(j["npo"]["queries"].get<int>() == 1);
}

TEST_CASE("embedding files round-trip with a text index") {
    std::mt19937_64 rng(9);
    EmbeddingSet set;
    set.dim = 3;
    set.parts = 2;
    for (int i = 0; i < 4; ++i) {
        EmbeddingRecord r = random_record(rng, 3, 2);
        r.image_id = "img_" + std::to_string(i);
        r.identity = i / 2;
        r.camera = i;
        r.occlusion = static_cast<Occlusion>(i % 3);
        set.records.push_back(r);
    }
    const auto path = temp_path("roundtrip.bin");
    save_embeddings(path, set);
    EmbeddingSet back = load_embeddings(path);
    REQUIRE(back.records.size() == 4);
    CHECK(back.dim == 3);
    CHECK(back.parts == 2);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.records[i].image_id == set.records[i].image_id);
        CHECK(back.records[i].occlusion == set.records[i].occlusion);
        CHECK(back.records[i].parts == set.records[i].parts);
        CHECK(back.records[i].visibility == set.records[i].visibility);
    }
    std::ifstream index(embedding_index_path(path));
    std::string id, occ;
    long long identity, camera, offset;
    index >> id >> identity >> camera >> occ >> offset;
    CHECK(id == "img_0");
    CHECK(occ == "holistic");
    CHECK(offset == 8 + 4 + 4 + 4 + 8);
    CHECK(back.find("img_3") != nullptr);
    CHECK(back.find("nope") == nullptr);

    set.records[1].global.push_back(0.0);
    CHECK_THROWS_AS(save_embeddings(path, set), DimensionError);
    std::ofstream(path, std::ios::binary) << "garbage";
    CHECK_THROWS_AS(load_embeddings(path), IoError);
    std::filesystem::remove(path);
    std::filesystem::remove(embedding_index_path(path));
}

TEST_CASE("manifest CSV round trip and validation") {
    Manifest m{{"a", 1, 2, Split::Train, Occlusion::Unlabeled},
               {"b", 3, 4, Split::Query, Occlusion::NPO},
               {"c", 3, 5, Split::Gallery, Occlusion::NTP}};
    std::stringstream buf;
    write_manifest(buf, m);
    CHECK(buf.str().starts_with("image_id,identity,camera,split,occlusion\n"));
    CHECK(read_manifest(buf) == m);

    std::stringstream dup("image_id,identity,camera,split,occlusion\nx,1,1,train,\nx,1,1,train,\n");
    CHECK_THROWS_AS(read_manifest(dup), ValidationError);
    std::stringstream bad("image_id,identity,camera,split,occlusion\nx,1,1,nowhere,holistic\n");
    CHECK_THROWS_AS(read_manifest(bad), ValidationError);
    std::stringstream header("id,who\n");
    CHECK_THROWS_AS(read_manifest(header), ValidationError);
    std::stringstream comments("# note\nimage_id,identity,camera,split,occlusion\n\nz,-1,0,Gallery,Holistic\n");
    Manifest c = read_manifest(comments);
    REQUIRE(c.size() == 1);
    CHECK(c[0].identity == -1);
    CHECK(c[0].occlusion == Occlusion::Holistic);
}
