#include "tsd/harness/gradient_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "tsd/harness/model.hpp"
#include "tsd/model/decoder.hpp"
#include "tsd/model/losses.hpp"
#include "tsd/model/mask_generator.hpp"
#include "tsd/numeric/ops.hpp"
#include "tsd/numeric/random.hpp"

namespace tsd {

bool GradientSuiteResult::passed() const {
    return !cases.empty() && std::ranges::all_of(cases, [](const GradientCase& c) { return c.passed(); });
}

double GradientSuiteResult::max_relative_error() const {
    double m = 0;
    for (const GradientCase& c : cases) m = std::max(m, c.report.max_relative_error);
    return m;
}

namespace {

Tensor uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor(shape, std::move(v), true);
}

// Distinct fixed weight per output entry.
Tensor probe(const Tensor& y) {
    std::vector<double> w(y.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

void jitter(const ParameterSet& params, Rng& rng, double amount) {
    std::normal_distribution<double> n(0.0, amount);
    for (const NamedTensor& e : params.entries()) {
        for (double& v : Tensor(e.tensor).mutable_values()) v += n(rng);
    }
}

class Suite {
public:
    Suite(const std::function<void(const GradientCase&)>& cb) : cb_(cb) {}

    void check(const std::string& name, const std::function<Tensor()>& fn,
               const std::vector<Tensor>& inputs) {
        std::vector<NamedTensor> named;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            named.push_back({name + "#" + std::to_string(i), inputs[i]});
        }
        check_named(name, fn, named);
    }

    // Key biases are compared against zero instead of finite differences,
    // whose value there is pure rounding noise.
    void check_named(const std::string& name, const std::function<Tensor()>& fn,
                     const std::vector<NamedTensor>& inputs) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<NamedTensor> checked, key_biases;
        for (const NamedTensor& e : inputs) {
            (e.name.ends_with("k.bias") ? key_biases : checked).push_back(e);
        }
        GradientCase c;
        c.report = check_gradients(name, fn, checked);
        if (!key_biases.empty()) {
            for (const NamedTensor& e : key_biases) Tensor(e.tensor).zero_grad();
            fn().backward();
            for (const NamedTensor& e : key_biases) {
                if (!e.tensor.has_grad()) continue;
                for (double g : e.tensor.grad()) c.key_bias_grad = std::max(c.key_bias_grad, std::abs(g));
            }
        }
        c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cb_) cb_(c);
        result.cases.push_back(std::move(c));
    }

    GradientSuiteResult result;

private:
    std::function<void(const GradientCase&)> cb_;
};

void op_cases(Suite& s, Rng& rng) {
    {
        Tensor a = uniform({3, 4}, rng), b = uniform({4, 5}, rng);
        s.check("matmul", [&] { return probe(matmul(a, b)); }, {a, b});
        Tensor ba = uniform({2, 3, 4}, rng), bb = uniform({2, 5, 4}, rng), sb = uniform({4, 5}, rng);
        s.check("matmul_batched_shared", [&] { return probe(matmul(ba, sb)); }, {ba, sb});
        s.check("matmul_transposed_batched", [&] { return probe(matmul_transposed(ba, bb)); }, {ba, bb});
    }
    {
        Tensor a = uniform({2, 3, 4}, rng), b = uniform({3, 4}, rng), c = uniform({4}, rng);
        s.check("add_broadcast", [&] { return probe(add(a, c)); }, {a, c});
        s.check("sub_broadcast", [&] { return probe(sub(a, b)); }, {a, b});
        s.check("mul_broadcast", [&] { return probe(mul(a, b)); }, {a, b});
        s.check("scale", [&] { return probe(scale(a, -1.7)); }, {a});
        s.check("add_scalar", [&] { return probe(add_scalar(a, 0.3)); }, {a});
        s.check("gelu", [&] { return probe(gelu(a)); }, {a});
        s.check("sigmoid", [&] { return probe(sigmoid(scale(a, 3.0))); }, {a});
    }
    {
        Tensor x = uniform({2, 3, 5}, rng);
        s.check("softmax_last", [&] { return probe(softmax(x)); }, {x});
        s.check("softmax_middle", [&] { return probe(softmax(x, 1)); }, {x});
        std::vector<double> bias(30, 0.0);
        for (std::size_t i = 0; i < bias.size(); i += 3) bias[i] = -std::numeric_limits<double>::infinity();
        const Tensor mask(Shape{2, 3, 5}, bias);
        s.check("softmax_masked", [&] { return probe(softmax(add(x, mask))); }, {x});
    }
    {
        Tensor x = uniform({4, 6}, rng), g = uniform({6}, rng, 0.5, 1.5), b = uniform({6}, rng);
        s.check("layer_norm", [&] { return probe(layer_norm(x, g, b)); }, {x, g, b});
        s.check("batch_norm", [&] { return probe(batch_norm(x, g, b).output); }, {x, g, b});
    }
    {
        Tensor x = uniform({2, 3, 4}, rng), y = uniform({2, 2, 4}, rng);
        s.check("reshape", [&] { return probe(reshape(x, {6, 4})); }, {x});
        s.check("permute", [&] { return probe(permute(x, {2, 0, 1})); }, {x});
        s.check("concat", [&] { return probe(concat({x, y}, 1)); }, {x, y});
        s.check("slice", [&] { return probe(slice(x, 2, 1, 3)); }, {x});
        s.check("expand", [&] { return probe(expand(y, 3)); }, {y});
        s.check("sum", [&] { return mul(sum(x), sum(x)); }, {x});
        s.check("mean", [&] { return mul(mean(x), mean(x)); }, {x});
        s.check("sum_axis", [&] { return probe(sum(x, 1)); }, {x});
    }
    {
        Tensor a = uniform({3, 4}, rng), b = uniform({3, 4}, rng), p = uniform({2, 3, 4}, rng);
        s.check("cosine_similarity", [&] { return probe(cosine_similarity(a, b)); }, {a, b});
        s.check("pairwise_cosine", [&] { return probe(pairwise_cosine(p)); }, {p});
        Tensor e = uniform({5, 3}, rng);
        s.check("euclidean_distances", [&] { return probe(euclidean_distances(e)); }, {e});
        Tensor pe = uniform({4, 2, 3}, rng);
        s.check("part_euclidean_distances", [&] { return probe(part_euclidean_distances(pe)); }, {pe});
    }
    {
        Tensor logits = uniform({4, 5}, rng);
        const std::vector<std::size_t> labels{0, 3, 4, 1};
        s.check("cross_entropy", [&] { return cross_entropy(logits, labels); }, {logits});
        s.check("cross_entropy_smoothed", [&] { return cross_entropy(logits, labels, 0.1); }, {logits});
        Tensor f = uniform({6, 3}, rng);
        const std::vector<std::int64_t> ids{0, 0, 1, 1, 2, 2};
        s.check("batch_hard_triplet", [&] { return batch_hard_triplet(euclidean_distances(f), ids, 1.0); },
                {f});
        Tensor pr = uniform({6}, rng, 0.1, 0.9);
        const std::vector<std::uint8_t> t{1, 0, 1, 1, 0, 0};
        s.check("focal_loss", [&] { return focal_loss(pr, t, 0.25, 2.0); }, {pr});
        Tensor feats = uniform({2, 5, 3}, rng), heat = uniform({2, 5, 4}, rng, 0.05, 1.0);
        s.check("part_pool", [&] { return probe(part_pool(feats, heat)); }, {feats, heat});
    }
}

void loss_cases(Suite& s, Rng& rng) {
    const std::size_t b = 6, p = 3, d = 4;
    const std::vector<std::int64_t> ids{0, 0, 1, 1, 2, 2};
    const std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
    Tensor st = uniform({b, p, d}, rng), te = uniform({b, p, d}, rng);
    s.check("distillation", [&] { return distillation_loss(st, te, false); }, {st, te});
    s.check("diversity", [&] { return diversity_loss(te); }, {te});
    std::vector<std::uint8_t> vis(b * p, 1);
    vis[1] = vis[8] = 0;
    s.check("part_avg_triplet", [&] { return part_avg_triplet(st, vis, ids, 1.0); }, {st});
    Tensor vp = uniform({b, p}, rng, 0.1, 0.9);
    s.check("focal_visibility", [&] { return focal_visibility_loss(vp, vis); }, {vp});
    BnneckHead head(p * d, 3, rng);
    Tensor flat = uniform({b, p * d}, rng);
    s.check_named("ce_bnneck", [&] { return ce_bnneck(flat, labels, head, 0.1); },
                  {{"feature", flat}, {"gain", head.gain}, {"classifier", head.classifier}});
}

void component_cases(Suite& s, Rng& rng) {
    {
        MultiHeadAttention attn(4, 2, rng);
        Tensor q = uniform({2, 3, 4}, rng), kv = uniform({2, 5, 4}, rng);
        ParameterSet ps;
        attn.collect(ps, "attn.");
        jitter(ps, rng, 0.3);
        std::vector<NamedTensor> in = ps.entries();
        in.push_back({"query", q});
        in.push_back({"context", kv});
        s.check_named("multi_head_attention", [&] { return probe(attn(q, kv).output); }, in);

        PartMask m0(3, 5), m1(3, 5);
        for (std::size_t i = 0; i < 5; ++i) {
            m0.set(i % 3, i, true);
            m1.set(0, i, true);
        }
        m1.set(2, 4, true);  // row 1 of m1 stays empty: fallback
        const std::vector<PartMask> masks{m0, m1};
        Tensor k = uniform({2, 5, 4}, rng), v = uniform({2, 5, 4}, rng);
        s.check("masked_cross_attention",
                [&] { return probe(masked_cross_attention(q, k, v, masks, 2, true).output); }, {q, k, v});
    }
    {
        MaskGenerator gen(3, 4, rng);
        Tensor f = uniform({2, 5, 4}, rng);
        s.check("mask_generator_pooling", [&] {
            PartHeatmaps h = gen.heatmaps(f);
            return add(probe(pool_parts(f, h).parts), probe(h.logits));
        }, {f, gen.weight});
    }
}

void model_case(Suite& s, Rng& rng) {
    ModelConfig cfg;
    cfg.variant = Variant::M4;
    cfg.num_classes = 3;
    cfg.distill_stop_gradient = false;  // the stopped path is invisible to differences
    cfg.encoder.image_h = 8;
    cfg.encoder.image_w = 4;
    cfg.encoder.channels = 1;
    cfg.encoder.patch_size = cfg.encoder.stride = 2;
    cfg.encoder.depth = 1;
    cfg.encoder.heads = 2;
    cfg.encoder.dim = 4;
    cfg.encoder.ffn_dim = 6;
    cfg.decoder.parts = 4;
    cfg.decoder.heads = 2;
    cfg.decoder.ffn_dim = 6;
    TsdModel model(cfg, rng);
    ParameterSet state = model.state();
    std::vector<NamedTensor> params;
    for (const NamedTensor& e : state.entries()) {
        if (e.name.ends_with("running_mean") || e.name.ends_with("running_var")) continue;
        params.push_back(e);
    }
    ParameterSet jittered;
    for (const NamedTensor& e : params) jittered.add(e.name, e.tensor);
    jitter(jittered, rng, 0.3);

    Batch batch;
    batch.images = uniform({6, 1, 8, 4}, rng);
    batch.images.set_requires_grad(false);
    batch.labels = {0, 0, 1, 1, 2, 2};
    batch.ids = {0, 0, 1, 1, 2, 2};
    // 4×2 patch grid, one patch row per part; some rows hidden.
    for (std::size_t i = 0; i < 6; ++i) {
        PartLabelMap l;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 2; ++c)
                l.labels.push_back((r + i) % 5 == 4 ? 0 : static_cast<int>(r) + 1);
        batch.parts.push_back(l);
    }
    // Generated masks are piecewise constant in the weights; steps this
    // small do not move the argmax.
    s.check_named("tsd_forward_total_loss", [&] { return model.forward_train(batch, 0).losses.total; },
                  params);
}

}  // namespace

GradientSuiteResult run_gradient_suite(std::uint64_t seed,
                                       const std::function<void(const GradientCase&)>& on_case) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    Suite s(on_case);
    op_cases(s, rng);
    loss_cases(s, rng);
    component_cases(s, rng);
    model_case(s, rng);
    s.result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s.result;
}

}  // namespace tsd
