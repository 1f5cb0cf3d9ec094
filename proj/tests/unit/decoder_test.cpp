#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "support/attention_oracle.hpp"
#include "support/test_util.hpp"
#include "tsd/model/decoder.hpp"
#include "tsd/numeric/errors.hpp"

using namespace tsd;
using namespace tsd::testing;

namespace {

DecoderConfig small_config(std::size_t parts = 3, std::size_t dim = 8, std::size_t heads = 2) {
    DecoderConfig cfg;
    cfg.parts = parts;
    cfg.dim = dim;
    cfg.heads = heads;
    cfg.ffn_dim = 2 * dim;
    return cfg;
}

void zero(Tensor t) {
    for (double& v : t.mutable_values()) v = 0.0;
}

void jitter(const ParameterSet& params, Rng& rng, double amount) {
    std::uniform_real_distribution<double> u(-amount, amount);
    for (const NamedTensor& e : params.entries()) {
        Tensor t = e.tensor;
        for (double& v : t.mutable_values()) v += u(rng);
    }
}

std::vector<std::vector<bool>> to_bool(const PartMask& m) {
    std::vector<std::vector<bool>> out(m.parts(), std::vector<bool>(m.patches()));
    for (std::size_t p = 0; p < m.parts(); ++p)
        for (std::size_t i = 0; i < m.patches(); ++i) out[p][i] = m.at(p, i);
    return out;
}

PartMask random_mask(std::size_t parts, std::size_t patches, Rng& rng) {
    PartMask m(parts, patches);
    std::bernoulli_distribution coin(0.4);
    for (std::size_t p = 0; p < parts; ++p) {
        for (std::size_t i = 0; i < patches; ++i) m.set(p, i, coin(rng));
        if (m.row_empty(p)) m.set(p, uniform_index(rng, patches), true);
    }
    return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

}  // namespace

TEST_CASE("query self-attention with zero value projection is the identity") {
    Rng rng(1);
    TsdDecoder dec(small_config(), rng);
    zero(dec.layers[0].self_attn.value_proj.weight);
    zero(dec.layers[0].self_attn.value_proj.bias);
    zero(dec.layers[0].self_attn.out_proj.bias);
    Tensor g = random_tensor({2, 8}, rng, -1, 1, false);
    Tensor tokens = dec.query_self_attention(g);
    REQUIRE(tokens.shape() == Shape{2, 4, 8});
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(tokens[(b * 4) * 8 + c] == g[b * 8 + c]);
            for (std::size_t p = 0; p < 3; ++p) {
                CHECK(tokens[(b * 4 + 1 + p) * 8 + c] == dec.queries[p * 8 + c]);
            }
        }
    }
}

TEST_CASE("query self-attention is equivariant to query row permutations") {
    Rng rng(2);
    TsdDecoder dec(small_config(), rng);
    jitter(dec.parameters(), rng, 0.3);
    Tensor g = random_tensor({1, 8}, rng, -1, 1, false);
    NoGradGuard ng;
    Tensor a = dec.query_self_attention(g);
    // swap queries 0 and 2
    std::vector<double> q(dec.queries.values().begin(), dec.queries.values().end());
    for (std::size_t c = 0; c < 8; ++c) std::swap(q[c], q[16 + c]);
    std::ranges::copy(q, dec.queries.mutable_values().begin());
    Tensor b = dec.query_self_attention(g);
    for (std::size_t c = 0; c < 8; ++c) {
        CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-13));
        CHECK(a[8 + c] == doctest::Approx(b[24 + c]).epsilon(1e-13));
        CHECK(a[16 + c] == doctest::Approx(b[16 + c]).epsilon(1e-13));
        CHECK(a[24 + c] == doctest::Approx(b[8 + c]).epsilon(1e-13));
    }
}

TEST_CASE("query self-attention matches a step-by-step single-head oracle") {
    Rng rng(3);
    DecoderConfig cfg = small_config(1, 2, 1);
    TsdDecoder dec(cfg, rng);
    jitter(dec.parameters(), rng, 0.5);
    Tensor g = Tensor::matrix({{0.7, -0.4}});
    Tensor out = dec.query_self_attention(g);

    const auto& layer = dec.layers[0];
    Matrix tokens = {{0.7, -0.4}, {dec.queries[0], dec.queries[1]}};
    Matrix h = oracle_layer_norm(tokens, layer.self_norm.gain, layer.self_norm.bias);
    const auto& a = layer.self_attn;
    Matrix q = oracle_linear(h, a.query_proj.weight, a.query_proj.bias);
    Matrix k = oracle_linear(h, a.key_proj.weight, a.key_proj.bias);
    Matrix v = oracle_linear(h, a.value_proj.weight, a.value_proj.bias);
    // two tokens, one head of width 2: explicit softmax
    Matrix mixed(2, std::vector<double>(2));
    for (std::size_t i = 0; i < 2; ++i) {
        const double l0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
        const double l1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
        const double w0 = 1.0 / (1.0 + std::exp(l1 - l0)), w1 = 1.0 - w0;
        for (std::size_t c = 0; c < 2; ++c) mixed[i][c] = w0 * v[0][c] + w1 * v[1][c];
    }
    Matrix o = oracle_linear(mixed, a.out_proj.weight, a.out_proj.bias);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(out[i * 2 + c] == doctest::Approx(tokens[i][c] + o[i][c]).epsilon(1e-13));
}

TEST_CASE("single key gets weight one") {
    Rng rng(4);
    Tensor q = random_tensor({1, 3, 4}, rng, -1, 1, false);
    Tensor k = random_tensor({1, 1, 4}, rng, -1, 1, false);
    Tensor v = random_tensor({1, 1, 4}, rng, -1, 1, false);
    AttentionResult r = masked_cross_attention(q, k, v, {}, 2, true);
    for (double w : r.weights.values()) CHECK(w == 1.0);
    for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t c = 0; c < 4; ++c) CHECK(r.output[p * 4 + c] == v[c]);
}

TEST_CASE("identical keys give uniform weights and the mean value row") {
    Rng rng(5);
    const std::size_t n = 5;
    Tensor q = random_tensor({1, 2, 4}, rng, -1, 1, false);
    Tensor row = random_tensor({1, 1, 4}, rng, -1, 1, false);
    Tensor k = reshape(expand(reshape(row, {4}), n), {1, n, 4});
    Tensor v = random_tensor({1, n, 4}, rng, -1, 1, false);
    AttentionResult r = masked_cross_attention(q, k, v, {}, 2, true);
    for (double w : r.weights.values()) CHECK(w == doctest::Approx(1.0 / n).epsilon(1e-15));
    for (std::size_t c = 0; c < 4; ++c) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += v[i * 4 + c] / n;
        CHECK(r.output[c] == doctest::Approx(m).epsilon(1e-13));
    }
}

TEST_CASE("student cross-attention matches the loop oracle") {
    Rng rng(6);
    const std::size_t p = 3, n = 7, d = 8, heads = 2;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor q = random_tensor({1, p, d}, rng, -2, 2, false);
        Tensor k = random_tensor({1, n, d}, rng, -2, 2, false);
        Tensor v = random_tensor({1, n, d}, rng, -2, 2, false);
        AttentionResult r = masked_cross_attention(q, k, v, {}, heads, true);
        OracleAttention o = oracle_attention(to_matrix(q, 0, p, d), to_matrix(k, 0, n, d),
                                             to_matrix(v, 0, n, d), heads, true);
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t c = 0; c < d; ++c)
                CHECK(r.output[i * d + c] == doctest::Approx(o.output[i][c]).epsilon(1e-12));
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    CHECK(r.weights[(h * p + i) * n + j] ==
                          doctest::Approx(o.weights[h][i][j]).epsilon(1e-12));
    }
}

TEST_CASE("masked attention matches the restricted-softmax oracle with zero leakage") {
    Rng rng(7);
    const std::size_t b = 2, p = 4, n = 9, d = 8, heads = 2;
    for (bool scaled : {true, false}) {
        for (int trial = 0; trial < 25; ++trial) {
            Tensor q = random_tensor({b, p, d}, rng, -2, 2, false);
            Tensor k = random_tensor({b, n, d}, rng, -2, 2, false);
            Tensor v = random_tensor({b, n, d}, rng, -2, 2, false);
            std::vector<PartMask> masks{random_mask(p, n, rng), random_mask(p, n, rng)};
            AttentionResult r = masked_cross_attention(q, k, v, masks, heads, scaled);
            for (std::size_t s = 0; s < b; ++s) {
                OracleAttention o = oracle_attention(
                    to_matrix(q, s * p * d, p, d), to_matrix(k, s * n * d, n, d),
                    to_matrix(v, s * n * d, n, d), heads, scaled, to_bool(masks[s]));
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t c = 0; c < d; ++c)
                        CHECK(r.output[(s * p + i) * d + c] ==
                              doctest::Approx(o.output[i][c]).epsilon(1e-12));
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t i = 0; i < p; ++i) {
                        double inside = 0;
                        for (std::size_t j = 0; j < n; ++j) {
                            const double w = r.weights[((s * heads + h) * p + i) * n + j];
                            if (!masks[s].at(i, j)) CHECK(w == 0.0);
                            else inside += w;
                            CHECK(w == doctest::Approx(o.weights[h][i][j]).epsilon(1e-12));
                        }
                        CHECK(inside == doctest::Approx(1.0).epsilon(1e-14));
                    }
            }
        }
    }
}

TEST_CASE("one-hot mask row returns that value row exactly") {
    Rng rng(8);
    Tensor q = random_tensor({1, 2, 4}, rng, -1, 1, false);
    Tensor k = random_tensor({1, 5, 4}, rng, -1, 1, false);
    Tensor v = random_tensor({1, 5, 4}, rng, -1, 1, false);
    PartMask m(2, 5);
    m.set(0, 3, true);
    m.set(1, 0, true);
    std::vector<PartMask> masks{m};
    AttentionResult r = masked_cross_attention(q, k, v, masks, 2, true);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(r.output[c] == v[3 * 4 + c]);
        CHECK(r.output[4 + c] == v[c]);
    }
}

TEST_CASE("empty mask rows: fallback attends everywhere, otherwise an error") {
    Rng rng(9);
    Tensor q = random_tensor({1, 2, 4}, rng, -1, 1, false);
    Tensor k = random_tensor({1, 5, 4}, rng, -1, 1, false);
    Tensor v = random_tensor({1, 5, 4}, rng, -1, 1, false);
    PartMask m(2, 5);
    m.set(0, 1, true);
    std::vector<PartMask> masks{m};
    AttentionResult with = masked_cross_attention(q, k, v, masks, 1, true, true);
    AttentionResult open = masked_cross_attention(q, k, v, {}, 1, true);
    for (std::size_t c = 0; c < 4; ++c) CHECK(with.output[4 + c] == open.output[4 + c]);
    CHECK_THROWS_AS(masked_cross_attention(q, k, v, masks, 1, true, false), DegenerateMaskError);
    CHECK_THROWS_AS(mask_logit_bias(masks, false), ContractError);
}

TEST_CASE("mask bias entries are 0 or -inf") {
    PartMask m(2, 3);
    m.set(0, 0, true);
    m.set(1, 2, true);
    std::vector<PartMask> masks{m};
    Tensor bias = mask_logit_bias(masks, true);
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> expected{0, ninf, ninf, ninf, ninf, 0};
    CHECK(std::ranges::equal(bias.values(), expected));
}

TEST_CASE("tsd_forward shape contract for P=8, D=64") {
    Rng rng(10);
    DecoderConfig cfg;
    cfg.dim = 64;
    cfg.heads = 4;
    TsdDecoder dec(cfg, rng);
    EncoderOutput enc{random_tensor({2, 64}, rng, -1, 1, false),
                      random_tensor({2, 12, 64}, rng, -1, 1, false), 4, 3};
    std::vector<PartMask> masks(2, PartMask::all_ones(8, 12));
    NoGradGuard ng;
    TsdOutput out = dec.forward(enc, masks);
    CHECK(out.has_teacher);
    CHECK(out.student.parts.shape() == Shape{2, 8, 64});
    CHECK(out.student.concat.shape() == Shape{2, 512});
    CHECK(out.teacher.parts.shape() == Shape{2, 8, 64});
    CHECK(out.teacher.concat.shape() == Shape{2, 512});
    CHECK(out.student.attention.shape() == Shape{2, 8, 12});
    CHECK(dec.visibility(out.student).shape() == Shape{2, 8});
    // concat rows follow part order
    for (std::size_t i = 0; i < 2 * 8 * 64; ++i) CHECK(out.student.concat[i] == out.student.parts[i]);

    TsdOutput student_only = dec.forward(enc, {});
    CHECK_FALSE(student_only.has_teacher);
    CHECK(bit_equal(student_only.student.parts, out.student.parts));
}

TEST_CASE("all-ones masks make teacher and student bit-identical") {
    Rng rng(11);
    for (std::size_t layers : {1u, 2u}) {
        DecoderConfig cfg = small_config(4, 8, 2);
        cfg.layers = layers;
        TsdDecoder dec(cfg, rng);
        EncoderOutput enc{random_tensor({3, 8}, rng, -1, 1, false),
                          random_tensor({3, 6, 8}, rng, -1, 1, false), 3, 2};
        std::vector<PartMask> masks(3, PartMask::all_ones(4, 6));
        TsdOutput out = dec.forward(enc, masks);
        CHECK(bit_equal(out.student.parts, out.teacher.parts));
        CHECK(bit_equal(out.student.attention, out.teacher.attention));
    }
}

TEST_CASE("teacher attention mass lies inside the mask") {
    Rng rng(12);
    DecoderConfig cfg = small_config(4, 8, 2);
    cfg.layers = 2;
    TsdDecoder dec(cfg, rng);
    EncoderOutput enc{random_tensor({2, 8}, rng, -1, 1, false),
                      random_tensor({2, 10, 8}, rng, -1, 1, false), 5, 2};
    std::vector<PartMask> masks{random_mask(4, 10, rng), random_mask(4, 10, rng)};
    TsdOutput out = dec.forward(enc, masks);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t p = 0; p < 4; ++p) {
            double inside = 0;
            for (std::size_t i = 0; i < 10; ++i) {
                const double w = out.teacher.attention[(s * 4 + p) * 10 + i];
                if (masks[s].at(p, i)) inside += w;
                else CHECK(w == 0.0);
            }
            CHECK(inside == doctest::Approx(1.0).epsilon(1e-14));
        }
}

TEST_CASE("unscaled teacher logits follow the flag") {
    Rng rng(13);
    DecoderConfig cfg = small_config(2, 8, 2);
    TsdDecoder scaled(cfg, rng);
    cfg.scale_teacher_logits = false;
    Rng rng2(13);
    TsdDecoder unscaled(cfg, rng2);
    EncoderOutput enc{random_tensor({1, 8}, rng, -2, 2, false),
                      random_tensor({1, 5, 8}, rng, -2, 2, false), 5, 1};
    std::vector<PartMask> masks(1, PartMask::all_ones(2, 5));
    TsdOutput a = scaled.forward(enc, masks), b = unscaled.forward(enc, masks);
    CHECK(bit_equal(a.student.parts, b.student.parts));
    CHECK_FALSE(bit_equal(a.teacher.parts, b.teacher.parts));
}

TEST_CASE("teacher and student share parameter tensors") {
    Rng rng(14);
    TsdDecoder dec(small_config(2, 4, 1), rng);
    EncoderOutput enc{random_tensor({1, 4}, rng, -1, 1, false),
                      random_tensor({1, 3, 4}, rng, -1, 1, false), 3, 1};
    PartMask m(2, 3);
    m.set(0, 0, true);
    m.set(1, 2, true);
    std::vector<PartMask> masks{m};

    // A loss on the teacher alone reaches the cross-attention weights the
    // student uses.
    TsdOutput out = dec.forward(enc, masks);
    sum(out.teacher.parts).backward();
    CHECK(dec.layers[0].cross_attn.query_proj.weight.has_grad());

    // Editing a shared tensor moves both branches.
    NoGradGuard ng;
    TsdOutput before = dec.forward(enc, masks);
    dec.layers[0].ffn.fc2.bias.mutable_values()[0] += 1.0;
    TsdOutput after = dec.forward(enc, masks);
    CHECK(after.student.parts[0] == doctest::Approx(before.student.parts[0] + 1.0));
    CHECK(after.teacher.parts[0] == doctest::Approx(before.teacher.parts[0] + 1.0));
}

TEST_CASE("full gradcheck of a 2-layer toy encoder and decoder") {
    Rng rng(15);
    EncoderConfig ecfg;
    ecfg.image_h = 8;
    ecfg.image_w = 4;
    ecfg.channels = 1;
    ecfg.patch_size = 4;
    ecfg.stride = 4;
    ecfg.depth = 2;
    ecfg.heads = 2;
    ecfg.dim = 4;
    ecfg.ffn_dim = 6;
    VitEncoder enc(ecfg, rng);
    DecoderConfig dcfg = small_config(2, 4, 2);
    dcfg.layers = 2;
    dcfg.ffn_dim = 6;
    TsdDecoder dec(dcfg, rng);

    ParameterSet params;
    params.append(enc.parameters(), "encoder.");
    params.append(dec.parameters(), "decoder.");
    jitter(params, rng, 0.3);

    Tensor images = random_tensor({2, 1, 8, 4}, rng, -1, 1, false);
    PartMask m0(2, 2), m1(2, 2);
    m0.set(0, 0, true);
    m0.set(1, 1, true);
    m1.set(0, 0, true);
    m1.set(0, 1, true);
    m1.set(1, 1, true);
    std::vector<PartMask> masks{m0, m1};
    auto loss = [&] {
        TsdOutput out = dec.forward(enc.encode(images), masks);
        return add(add(probe(out.student.concat), probe(out.teacher.concat)),
                   probe(dec.visibility(out.student)));
    };
    std::vector<NamedTensor> checked, key_biases;
    for (const NamedTensor& e : params.entries()) {
        (e.name.ends_with("k.bias") ? key_biases : checked).push_back(e);
    }
    GradcheckReport r = check_gradients("tsd", loss, checked);
    for (const auto& t : r.tensors) {
        if (t.relative_error >= 1e-4) MESSAGE(t.name << " " << t.relative_error);
    }
    CHECK(r.passed);
    CHECK(checked.size() + key_biases.size() == params.size());
    loss().backward();
    for (const NamedTensor& e : key_biases) {
        for (double g : e.tensor.grad()) CHECK(std::abs(g) < 1e-12);
    }
}

TEST_CASE("config validation") {
    Rng rng(16);
    DecoderConfig cfg = small_config(2, 6, 4);
    CHECK_THROWS_AS(TsdDecoder(cfg, rng), DimensionError);
    cfg = small_config();
    cfg.parts = 0;
    CHECK_THROWS_AS(TsdDecoder(cfg, rng), ContractError);
}
