#include "tsd/model/decoder.hpp"

#include <cmath>
#include <limits>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

void DecoderConfig::validate() const {
    if (parts == 0 || dim == 0 || ffn_dim == 0 || layers == 0 || heads == 0) {
        throw ContractError("decoder config: sizes must be positive");
    }
    if (dim % heads != 0) throw DimensionError("decoder config: heads must divide dim");
}

Tensor mask_logit_bias(std::span<const PartMask> masks, bool empty_part_fallback) {
    if (masks.empty()) throw ContractError("mask_logit_bias: no masks");
    const std::size_t p = masks.front().parts(), n = masks.front().patches();
    std::vector<double> bias(masks.size() * p * n, 0.0);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < masks.size(); ++b) {
        const PartMask& m = masks[b];
        if (m.parts() != p || m.patches() != n) {
            throw DimensionError("mask_logit_bias: masks in a batch differ in size");
        }
        for (std::size_t part = 0; part < p; ++part) {
            if (m.row_empty(part)) {
                if (!empty_part_fallback) {
                    throw DegenerateMaskError("part " + std::to_string(part) + " of sample " +
                                              std::to_string(b) + " has an empty mask");
                }
                continue;
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (!m.at(part, i)) bias[(b * p + part) * n + i] = neg_inf;
            }
        }
    }
    return Tensor(Shape{masks.size(), p, n}, std::move(bias));
}

AttentionResult masked_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                       std::span<const PartMask> masks, std::size_t heads,
                                       bool scaled, bool empty_part_fallback) {
    const std::size_t d = q.dim(-1);
    if (d % heads != 0) throw DimensionError("heads must divide the feature dimension");
    const double logit_scale = scaled ? 1.0 / std::sqrt(static_cast<double>(d / heads)) : 1.0;
    Tensor bias;
    if (!masks.empty()) {
        if (masks.size() != q.dim(0) || masks.front().parts() != q.dim(1) ||
            masks.front().patches() != k.dim(1)) {
            throw DimensionError("masked_cross_attention: masks do not match query/key shapes");
        }
        bias = repeat_over_heads(mask_logit_bias(masks, empty_part_fallback), heads);
    }
    AttentionResult core =
        attention_core(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads), bias,
                       logit_scale);
    return {merge_heads(core.output, heads), core.weights};
}

TsdDecoder::Layer::Layer(const DecoderConfig& cfg, Rng& rng)
    : self_norm(LayerNorm::create(cfg.dim)),
      self_attn(cfg.dim, cfg.heads, rng),
      cross_norm(LayerNorm::create(cfg.dim)),
      cross_attn(cfg.dim, cfg.heads, rng),
      ffn_norm(LayerNorm::create(cfg.dim)),
      ffn(FeedForward::create(cfg.dim, cfg.ffn_dim, rng)) {}

void TsdDecoder::Layer::collect(ParameterSet& params, const std::string& prefix) const {
    self_norm.collect(params, prefix + "self_norm.");
    self_attn.collect(params, prefix + "self_attn.");
    cross_norm.collect(params, prefix + "cross_norm.");
    cross_attn.collect(params, prefix + "cross_attn.");
    ffn_norm.collect(params, prefix + "ffn_norm.");
    ffn.collect(params, prefix + "ffn.");
}

TsdDecoder::TsdDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    queries = truncated_normal({cfg.parts, cfg.dim}, 0.02, rng);
    layers.reserve(cfg.layers);
    for (std::size_t i = 0; i < cfg.layers; ++i) layers.emplace_back(cfg_, rng);
    visibility_head = Linear::create(cfg.dim, 1, rng);
}

Tensor TsdDecoder::query_self_attention(const Tensor& global) const {
    if (global.rank() != 2 || global.dim(1) != cfg_.dim) {
        throw DimensionError("query_self_attention expects global features [B, D]");
    }
    const std::size_t b = global.dim(0);
    Tensor tokens =
        concat({reshape(global, {b, 1, cfg_.dim}), expand(queries, b)}, 1);
    const Layer& first = layers.front();
    Tensor h = first.self_norm(tokens);
    return add(tokens, first.self_attn(h, h).output);
}

DecoderOutput TsdDecoder::run_branch(Tensor tokens, const Tensor& patches, const Tensor& bias,
                                     bool scaled) const {
    const std::size_t b = tokens.dim(0), p = cfg_.parts;
    if (tokens.shape() != Shape{b, p + 1, cfg_.dim}) {
        throw DimensionError("decoder tokens must be [B, P+1, D]");
    }
    if (patches.rank() != 3 || patches.dim(0) != b || patches.dim(2) != cfg_.dim) {
        throw DimensionError("patch features must be [B, N, D]");
    }
    Tensor parts;
    Tensor weights;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& layer = layers[l];
        if (l > 0) {
            Tensor h = layer.self_norm(tokens);
            tokens = add(tokens, layer.self_attn(h, h).output);
        }
        Tensor cls = slice(tokens, 1, 0, 1);
        parts = slice(tokens, 1, 1, p + 1);
        AttentionResult cross = layer.cross_attn(layer.cross_norm(parts), patches, bias, scaled);
        weights = cross.weights;
        if (cfg_.residual) {
            parts = add(parts, cross.output);
            parts = add(parts, layer.ffn(layer.ffn_norm(parts)));
        } else {
            parts = layer.ffn(layer.ffn_norm(cross.output));
        }
        tokens = concat({cls, parts}, 1);
    }

    const std::size_t n = patches.dim(1), heads = cfg_.heads;
    std::vector<double> avg(b * p * n, 0.0);
    const auto w = weights.values();
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < p * n; ++i)
                avg[s * p * n + i] += w[(s * heads + h) * p * n + i] / static_cast<double>(heads);

    DecoderOutput out;
    out.parts = parts;
    out.concat = reshape(parts, {b, p * cfg_.dim});
    out.attention = Tensor(Shape{b, p, n}, std::move(avg));
    return out;
}

DecoderOutput TsdDecoder::student_cross_attention(const Tensor& tokens,
                                                  const Tensor& patches) const {
    return run_branch(tokens, patches, Tensor(), true);
}

DecoderOutput TsdDecoder::teacher_masked_cross_attention(const Tensor& tokens,
                                                         const Tensor& patches,
                                                         std::span<const PartMask> masks) const {
    if (masks.size() != tokens.dim(0)) {
        throw DimensionError("teacher needs one mask per sample");
    }
    if (masks.front().parts() != cfg_.parts || masks.front().patches() != patches.dim(1)) {
        throw DimensionError("teacher mask is not P x N");
    }
    return run_branch(tokens, patches, mask_logit_bias(masks, cfg_.empty_part_fallback),
                      cfg_.scale_teacher_logits);
}

TsdOutput TsdDecoder::forward(const EncoderOutput& enc, std::span<const PartMask> masks) const {
    Tensor tokens = query_self_attention(enc.global);
    TsdOutput out;
    out.student = student_cross_attention(tokens, enc.patches);
    if (!masks.empty()) {
        out.teacher = teacher_masked_cross_attention(tokens, enc.patches, masks);
        out.has_teacher = true;
    }
    return out;
}

Tensor TsdDecoder::visibility(const DecoderOutput& student) const {
    const std::size_t b = student.parts.dim(0);
    return reshape(sigmoid(visibility_head(student.parts)), {b, cfg_.parts});
}

ParameterSet TsdDecoder::parameters() const {
    ParameterSet params;
    params.add("queries", queries);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].collect(params, "layers." + std::to_string(i) + ".");
    }
    visibility_head.collect(params, "visibility.");
    return params;
}

}  // namespace tsd
