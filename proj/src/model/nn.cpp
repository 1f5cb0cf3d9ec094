#include "tsd/model/nn.hpp"

#include <cmath>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng) {
    return Linear{xavier_uniform(in, out, rng), Tensor(Shape{out}, 0.0, true)};
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + "weight", weight);
    params.add(prefix + "bias", bias);
}

LayerNorm LayerNorm::create(std::size_t dim) {
    return LayerNorm{Tensor(Shape{dim}, 1.0, true), Tensor(Shape{dim}, 0.0, true)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + "gain", gain);
    params.add(prefix + "bias", bias);
}

FeedForward FeedForward::create(std::size_t dim, std::size_t hidden, Rng& rng) {
    FeedForward f;
    f.fc1 = Linear::create(dim, hidden, rng);
    f.fc2 = Linear::create(hidden, dim, rng);
    return f;
}

Tensor FeedForward::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

void FeedForward::collect(ParameterSet& params, const std::string& prefix) const {
    fc1.collect(params, prefix + "fc1.");
    fc2.collect(params, prefix + "fc2.");
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
    const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
    if (heads == 0 || d % heads != 0) {
        throw DimensionError(std::to_string(heads) + " heads do not divide dimension " +
                             std::to_string(d));
    }
    if (heads == 1) return x;
    Tensor y = reshape(x, {b, t, heads, d / heads});
    y = permute(y, {0, 2, 1, 3});
    return reshape(y, {b * heads, t, d / heads});
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t g = x.dim(0), t = x.dim(1), d = x.dim(2);
    Tensor y = reshape(x, {g / heads, heads, t, d});
    y = permute(y, {0, 2, 1, 3});
    return reshape(y, {g / heads, t, heads * d});
}

AttentionResult attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                               const Tensor& bias, double logit_scale) {
    Tensor logits = scale(matmul_transposed(q, k), logit_scale);
    if (bias.defined()) logits = add(logits, bias);
    Tensor weights = softmax(logits, -1);
    return {matmul(weights, v), weights};
}

Tensor repeat_over_heads(const Tensor& bias, std::size_t heads) {
    if (heads == 1) return bias;
    const std::size_t b = bias.dim(0);
    const std::size_t block = bias.numel() / b;
    std::vector<double> out(bias.numel() * heads);
    const auto src = bias.values();
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t h = 0; h < heads; ++h)
            std::copy_n(src.data() + s * block, block, out.data() + (s * heads + h) * block);
    return Tensor(Shape{b * heads, bias.dim(1), bias.dim(2)}, std::move(out));
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng)
    : query_proj(Linear::create(dim, dim, rng)),
      key_proj(Linear::create(dim, dim, rng)),
      value_proj(Linear::create(dim, dim, rng)),
      out_proj(Linear::create(dim, dim, rng)),
      heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw DimensionError(std::to_string(heads) + " heads do not divide dimension " +
                             std::to_string(dim));
    }
}

AttentionResult MultiHeadAttention::operator()(const Tensor& query, const Tensor& context,
                                               const Tensor& bias, bool scaled) const {
    const std::size_t d = query.dim(-1);
    const double logit_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(d / heads_)) : 1.0;
    Tensor q = split_heads(query_proj(query), heads_);
    Tensor k = split_heads(key_proj(context), heads_);
    Tensor v = split_heads(value_proj(context), heads_);
    Tensor head_bias = bias.defined() ? repeat_over_heads(bias, heads_) : Tensor();
    AttentionResult core = attention_core(q, k, v, head_bias, logit_scale);
    return {out_proj(merge_heads(core.output, heads_)), core.weights};
}

void MultiHeadAttention::collect(ParameterSet& params, const std::string& prefix) const {
    query_proj.collect(params, prefix + "q.");
    key_proj.collect(params, prefix + "k.");
    value_proj.collect(params, prefix + "v.");
    out_proj.collect(params, prefix + "out.");
}

}  // namespace tsd
