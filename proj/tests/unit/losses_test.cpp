#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/test_util.hpp"
#include "tsd/model/losses.hpp"
#include "tsd/numeric/errors.hpp"

using namespace tsd;
using namespace tsd::testing;

namespace {

double l2(const Tensor& x, std::size_t a, std::size_t b, std::size_t d) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += (x[a * d + c] - x[b * d + c]) * (x[a * d + c] - x[b * d + c]);
    return std::sqrt(s + 1e-12);
}

// Exhaustive triplet enumeration: per anchor the largest hinge over every
// (positive, negative) pair, averaged over anchors.
double oracle_triplet(const std::vector<std::vector<double>>& dist, const std::vector<std::int64_t>& ids,
                      double margin) {
    const std::size_t n = ids.size();
    double total = 0;
    for (std::size_t a = 0; a < n; ++a) {
        double worst = 0;
        for (std::size_t p = 0; p < n; ++p) {
            if (p == a || ids[p] != ids[a]) continue;
            for (std::size_t q = 0; q < n; ++q) {
                if (ids[q] == ids[a]) continue;
                worst = std::max(worst, dist[a][p] - dist[a][q] + margin);
            }
        }
        total += worst;
    }
    return total / static_cast<double>(n);
}

std::vector<std::size_t> to_labels(const std::vector<std::int64_t>& ids) {
    return {ids.begin(), ids.end()};
}

}  // namespace

TEST_CASE("distillation loss hand values") {
    Tensor f = Tensor::matrix({{1, 2, 3}, {-1, 0.5, 2}});
    CHECK(distillation_loss(f, f).item() == doctest::Approx(0.0).epsilon(1e-12));

    Tensor s = Tensor::matrix({{1, 0}, {0, 3}});
    Tensor t = Tensor::matrix({{0, 2}, {-5, 0}});
    CHECK(distillation_loss(s, t).item() == doctest::Approx(1.0).epsilon(1e-12));

    Tensor s2 = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor t2 = Tensor::matrix({{-2, -4}, {3, 4}});
    CHECK(distillation_loss(s2, t2).item() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(distillation_loss(s2, Tensor(Shape{3, 2})), DimensionError);
}

TEST_CASE("distillation loss range and stop-gradient contract") {
    Rng rng(1);
    Tensor s = random_tensor({3, 4, 5}, rng), t = random_tensor({3, 4, 5}, rng);
    Tensor loss = distillation_loss(s, t);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() <= 2.0);
    loss.backward();
    CHECK(s.has_grad());
    CHECK_FALSE(t.has_grad());

    // perturbing the teacher moves the value
    Tensor t2 = t.clone();
    t2.mutable_values()[0] += 0.5;
    CHECK(distillation_loss(s, t2).item() != loss.item());

    CHECK(gradcheck("distill_student", [&] { return distillation_loss(s, t); }, {s}).passed);
    CHECK(gradcheck("distill_both", [&] { return distillation_loss(s, t, false); }, {s, t}).passed);
}

TEST_CASE("diversity loss hand values and loop oracle") {
    Tensor same = Tensor::matrix({{1, 2}, {1, 2}, {1, 2}});
    CHECK(diversity_loss(same).item() == doctest::Approx(1.0).epsilon(1e-12));
    Tensor ortho = Tensor::matrix({{1, 0}, {0, 2}});
    CHECK(diversity_loss(ortho).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(diversity_loss(Tensor::matrix({{1, 2}})), ContractError);

    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({3, 5}, rng);
        double acc = 0;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                if (i == j) continue;
                double dot = 0, ni = 0, nj = 0;
                for (std::size_t c = 0; c < 5; ++c) {
                    dot += x[i * 5 + c] * x[j * 5 + c];
                    ni += x[i * 5 + c] * x[i * 5 + c];
                    nj += x[j * 5 + c] * x[j * 5 + c];
                }
                acc += dot / (std::sqrt(ni) * std::sqrt(nj));
            }
        const double got = diversity_loss(x).item();
        CHECK(got == doctest::Approx(acc / 6).epsilon(1e-10));
        CHECK(got >= -1.0);
        CHECK(got <= 1.0);
    }
    Tensor batch = random_tensor({2, 4, 3}, rng);
    CHECK(gradcheck("diversity", [&] { return diversity_loss(batch); }, {batch}).passed);
}

TEST_CASE("focal visibility loss hand values") {
    std::vector<std::uint8_t> one{1}, zero{0};
    CHECK(focal_visibility_loss(Tensor::vector({0.5}), one).item() ==
          doctest::Approx(0.043321698784996581839).epsilon(1e-13));
    CHECK(focal_visibility_loss(Tensor::vector({0.5}), zero).item() ==
          doctest::Approx(0.12996509635498974552).epsilon(1e-13));
    CHECK(focal_visibility_loss(Tensor::vector({1.0 - 1e-9}), one).item() < 1e-10);
    CHECK(focal_visibility_loss(Tensor::vector({1.0}), zero).item() > 0.0);

    Rng rng(3);
    Tensor v = random_tensor({4, 3}, rng, 0.05, 0.95);
    std::vector<std::uint8_t> t{1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1};
    CHECK(gradcheck("focal", [&] { return focal_visibility_loss(v, t); }, {v}).passed);
}

TEST_CASE("smoothed cross-entropy hand case") {
    Tensor logits = Tensor::matrix({{2, 1, -1}});
    std::vector<std::size_t> y{0};
    CHECK(cross_entropy(logits, y, 0.1).item() ==
          doctest::Approx(0.48234555010151971875).epsilon(1e-14));
}

TEST_CASE("BNNeck cross-entropy limits") {
    Rng rng(4);
    BnneckHead head(4, 5, rng);
    for (double& w : head.classifier.mutable_values()) w = 0.0;
    Tensor f = random_tensor({6, 4}, rng, -1, 1, false);
    std::vector<std::size_t> y{0, 1, 2, 3, 4, 0};
    CHECK(ce_bnneck(f, y, head).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    // A classifier aligned with well separated features drives the loss to 0.
    BnneckHead big(2, 2, rng);
    Tensor g = Tensor::matrix({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
    std::vector<std::size_t> gy{0, 0, 1, 1};
    auto cls = big.classifier.mutable_values();
    cls[0] = 1e3;
    cls[1] = -1e3;
    cls[2] = -1e3;
    cls[3] = 1e3;
    CHECK(ce_bnneck(g, gy, big).item() < 1e-12);

    std::vector<std::size_t> bad{0, 0, 1, 7};
    CHECK_THROWS_AS(ce_bnneck(g, bad, big), ContractError);
}

TEST_CASE("BNNeck normalizes before the classifier") {
    Rng rng(5);
    BnneckHead head(3, 4, rng);
    Tensor f = random_tensor({5, 3}, rng);
    std::vector<std::size_t> y{0, 1, 2, 3, 1};
    // direct formula: per-feature batch standardization, then Wᵀ, then smoothed CE
    std::vector<double> logits(5 * 4, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        double mu = 0, var = 0;
        for (std::size_t i = 0; i < 5; ++i) mu += f[i * 3 + c] / 5;
        for (std::size_t i = 0; i < 5; ++i) var += (f[i * 3 + c] - mu) * (f[i * 3 + c] - mu) / 5;
        for (std::size_t i = 0; i < 5; ++i) {
            const double z = (f[i * 3 + c] - mu) / std::sqrt(var + 1e-5);
            for (std::size_t k = 0; k < 4; ++k) logits[i * 4 + k] += z * head.classifier[k * 3 + c];
        }
    }
    double expected = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        double mx = -1e300, z = 0;
        for (std::size_t k = 0; k < 4; ++k) mx = std::max(mx, logits[i * 4 + k]);
        for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits[i * 4 + k] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t k = 0; k < 4; ++k) {
            const double t = (k == y[i] ? 0.9 : 0.0) + 0.1 / 4;
            expected += t * (lse - logits[i * 4 + k]) / 5;
        }
    }
    CHECK(ce_bnneck(f, y, head, 0.1).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(gradcheck("bnneck", [&] { return ce_bnneck(f, y, head, 0.1); },
                    {f, head.gain, head.classifier})
              .passed);

    // running statistics move toward the batch and are used in eval mode
    CHECK(head.running_mean[0] != 0.0);
    Tensor eval = head.normalize(f, false);
    CHECK(eval.shape() == f.shape());
}

TEST_CASE("batch-hard triplet hand cases and exhaustive oracle") {
    std::vector<std::int64_t> ids{0, 0, 1, 1};
    Tensor sep = Tensor::matrix({{0, 0}, {0, 0.1}, {5, 0}, {5, 0.1}});
    CHECK(triplet_batch_hard(sep, ids).item() == 0.0);
    Tensor collapsed = Tensor::matrix({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
    CHECK(triplet_batch_hard(collapsed, ids, 0.3).item() == doctest::Approx(0.3).epsilon(1e-12));
    std::vector<std::int64_t> lonely{0, 0, 1, 2};
    CHECK_THROWS_AS(triplet_batch_hard(sep, lonely), ContractError);

    Rng rng(6);
    std::vector<std::int64_t> eight{3, 3, 7, 7, 1, 1, 9, 9};
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({8, 5}, rng);
        std::vector<std::vector<double>> d(8, std::vector<double>(8));
        for (std::size_t a = 0; a < 8; ++a)
            for (std::size_t b = 0; b < 8; ++b) d[a][b] = l2(x, a, b, 5);
        CHECK(triplet_batch_hard(x, eight).item() ==
              doctest::Approx(oracle_triplet(d, eight, 0.3)).epsilon(1e-12));
    }
    Tensor x = random_tensor({8, 5}, rng);
    CHECK(gradcheck("triplet", [&] { return triplet_batch_hard(x, eight, 2.0); }, {x}).passed);
}

TEST_CASE("part-average distance cases") {
    // two samples, three parts, every part at distance 2
    Tensor parts(Shape{2, 3, 1}, std::vector<double>{0, 1, 5, 2, 3, 7});
    std::vector<std::uint8_t> all(6, 1);
    Tensor d = part_distance_matrix(parts, all);
    CHECK(d[1] == doctest::Approx(2.0).epsilon(1e-10));

    Tensor mixed(Shape{2, 3, 1}, std::vector<double>{0, 1, 5, 4, 3, 7});
    std::vector<std::uint8_t> only_first{1, 0, 1, 1, 1, 0};
    CHECK(part_distance_matrix(mixed, only_first)[1] == doctest::Approx(4.0).epsilon(1e-10));

    // no shared part -> mean over all parts
    std::vector<std::uint8_t> none{1, 0, 0, 0, 1, 0};
    CHECK(part_distance_matrix(mixed, none)[1] == doctest::Approx((4.0 + 2 + 2) / 3).epsilon(1e-10));
}

TEST_CASE("part-average triplet matches a double-loop oracle") {
    Rng rng(7);
    const std::size_t b = 8, p = 4, d = 3;
    std::vector<std::int64_t> ids{0, 0, 1, 1, 2, 2, 3, 3};
    std::bernoulli_distribution coin(0.6);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({b, p, d}, rng);
        std::vector<std::uint8_t> vis(b * p);
        for (auto& v : vis) v = coin(rng);
        std::vector<std::vector<double>> dist(b, std::vector<double>(b));
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j) {
                double acc = 0, cnt = 0, all = 0;
                for (std::size_t q = 0; q < p; ++q) {
                    const double dq = l2(x, i * p + q, j * p + q, d);
                    all += dq;
                    if (vis[i * p + q] && vis[j * p + q]) {
                        acc += dq;
                        cnt += 1;
                    }
                }
                dist[i][j] = cnt > 0 ? acc / cnt : all / p;
            }
        Tensor m = part_distance_matrix(x, vis);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < b; ++j)
                CHECK(m[i * b + j] == doctest::Approx(dist[i][j]).epsilon(1e-12));
        CHECK(part_avg_triplet(x, vis, ids).item() ==
              doctest::Approx(oracle_triplet(dist, ids, 0.3)).epsilon(1e-12));
        if (trial == 0) {
            CHECK(gradcheck("part_triplet", [&] { return part_avg_triplet(x, vis, ids, 1.5); }, {x})
                      .passed);
        }
    }
}

TEST_CASE("total loss is the plain sum of its terms") {
    LossReport zero = total_loss({{"a", Tensor::scalar(0.0)}, {"b", Tensor::scalar(0.0)}});
    CHECK(zero.total.item() == 0.0);

    Rng rng(8);
    const std::size_t b = 8, p = 3, d = 4;
    std::vector<std::int64_t> ids{0, 0, 1, 1, 2, 2, 3, 3};
    Tensor global = random_tensor({b, d}, rng);
    Tensor student = random_tensor({b, p, d}, rng);
    Tensor teacher = random_tensor({b, p, d}, rng);
    Tensor vis_prob = random_tensor({b, p}, rng, 0.1, 0.9);
    std::vector<std::uint8_t> vis(b * p, 1);
    vis[2] = 0;
    vis[7] = 0;
    BnneckHead hg(d, 4, rng), hs(p * d, 4, rng), ht(p * d, 4, rng);
    auto labels = to_labels(ids);

    auto build = [&](bool stop_gradient) {
        Tensor sc = reshape(student, {b, p * d}), tc = reshape(teacher, {b, p * d});
        return std::vector<LossTerm>{
            {"ce_global", ce_bnneck(global, labels, hg)},
            {"tri_global", triplet_batch_hard(global, ids)},
            {"ce_student", ce_bnneck(sc, labels, hs)},
            {"tri_student", part_avg_triplet(student, vis, ids)},
            {"ce_teacher", ce_bnneck(tc, labels, ht)},
            {"tri_teacher", part_avg_triplet(teacher, vis, ids)},
            {"distill", distillation_loss(student, teacher, stop_gradient)},
            {"diversity", diversity_loss(teacher)},
            {"visibility", focal_visibility_loss(vis_prob, vis)},
        };
    };
    LossReport report = total_loss(build(true));
    double resum = 0;
    for (const LossTerm& t : report.terms) resum += t.value.item();
    CHECK(std::abs(report.total.item() - resum) <= 1e-9);

    // term-by-term recomputation from scratch
    std::vector<LossTerm> again = build(true);
    double oracle = 0;
    for (const LossTerm& t : again) oracle += t.value.item();
    CHECK(report.total.item() == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(report.value("distill") == doctest::Approx(distillation_loss(student, teacher).item()));
    CHECK(report.has("diversity"));
    CHECK_FALSE(report.has("parsing"));
    CHECK(report.value("parsing") == 0.0);

    CHECK_THROWS_AS(total_loss({{"a", Tensor::scalar(1.0)}, {"a", Tensor::scalar(2.0)}}),
                    ContractError);
    CHECK_THROWS_AS(total_loss({{"v", Tensor::vector({1.0, 2.0})}}), DimensionError);

    // The stop-gradient hides the distillation term from the teacher's
    // analytic gradient, so the full check runs with it off.
    auto sum_loss = [&] { return total_loss(build(false)).total; };
    CHECK(gradcheck("total", sum_loss, {global, student, teacher, vis_prob}).passed);
}
