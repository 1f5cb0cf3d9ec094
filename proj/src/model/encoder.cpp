#include "tsd/model/encoder.hpp"

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

void EncoderConfig::validate() const {
    if (channels == 0 || patch_size == 0 || stride == 0 || depth == 0 || dim == 0 ||
        ffn_dim == 0 || heads == 0) {
        throw ContractError("encoder config: sizes must be positive");
    }
    if (image_h < patch_size || image_w < patch_size) {
        throw DimensionError("encoder config: image smaller than one patch");
    }
    if (dim % heads != 0) {
        throw DimensionError("encoder config: heads must divide dim");
    }
}

Tensor extract_patches(const Tensor& images, const EncoderConfig& cfg) {
    const Shape& s = images.shape();
    const bool single = s.size() == 3;
    if (!(single || s.size() == 4)) throw DimensionError("images must be [C,H,W] or [B,C,H,W]");
    const std::size_t b = single ? 1 : s[0];
    const std::size_t c = s[s.size() - 3], h = s[s.size() - 2], w = s[s.size() - 1];
    if (c != cfg.channels || h != cfg.image_h || w != cfg.image_w) {
        throw DimensionError("image shape " + shape_string(s) + " does not match encoder config " +
                             std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_h) +
                             "x" + std::to_string(cfg.image_w));
    }
    const std::size_t gh = cfg.grid_h(), gw = cfg.grid_w(), p = cfg.patch_size;
    const std::size_t n = gh * gw, f = cfg.patch_features();
    const auto src = images.values();
    std::vector<double> out(b * n * f);
    for (std::size_t img = 0; img < b; ++img) {
        const double* base = src.data() + img * c * h * w;
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx) {
                double* row = out.data() + ((img * n) + gy * gw + gx) * f;
                std::size_t k = 0;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t dy = 0; dy < p; ++dy)
                        for (std::size_t dx = 0; dx < p; ++dx)
                            row[k++] = base[(ch * h + gy * cfg.stride + dy) * w + gx * cfg.stride + dx];
            }
    }
    return Tensor(Shape{b, n, f}, std::move(out));
}

EncoderBlock::EncoderBlock(std::size_t dim, std::size_t heads, std::size_t ffn_dim, Rng& rng)
    : norm1(LayerNorm::create(dim)),
      attn(dim, heads, rng),
      norm2(LayerNorm::create(dim)),
      ffn(FeedForward::create(dim, ffn_dim, rng)) {}

Tensor EncoderBlock::operator()(const Tensor& x) const {
    Tensor h = norm1(x);
    Tensor y = add(x, attn(h, h).output);
    return add(y, ffn(norm2(y)));
}

void EncoderBlock::collect(ParameterSet& params, const std::string& prefix) const {
    norm1.collect(params, prefix + "norm1.");
    attn.collect(params, prefix + "attn.");
    norm2.collect(params, prefix + "norm2.");
    ffn.collect(params, prefix + "ffn.");
}

VitEncoder::VitEncoder(const EncoderConfig& cfg, Rng& rng)
    : final_norm(LayerNorm::create(cfg.dim)), cfg_(cfg) {
    cfg_.validate();
    patch_embed = Linear::create(cfg.patch_features(), cfg.dim, rng);
    class_token = truncated_normal({1, cfg.dim}, 0.02, rng);
    position_embedding = truncated_normal({cfg.num_patches() + 1, cfg.dim}, cfg.position_init_std, rng);
    blocks.reserve(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        blocks.emplace_back(cfg.dim, cfg.heads, cfg.ffn_dim, rng);
    }
}

EncoderOutput VitEncoder::encode(const Tensor& images) const {
    return encode_patches(extract_patches(images, cfg_));
}

EncoderOutput VitEncoder::encode_patches(const Tensor& patch_rows) const {
    return encode_patches(patch_rows, position_embedding);
}

EncoderOutput VitEncoder::encode_patches(const Tensor& patch_rows, const Tensor& positions) const {
    if (patch_rows.rank() != 3 || patch_rows.dim(2) != cfg_.patch_features()) {
        throw DimensionError("patch rows " + shape_string(patch_rows.shape()) +
                             " do not match encoder config");
    }
    const std::size_t b = patch_rows.dim(0), n = patch_rows.dim(1), d = cfg_.dim;
    if (positions.shape() != Shape{n + 1, d}) {
        throw DimensionError("position table must be " + shape_string({n + 1, d}));
    }
    Tensor tokens = concat({expand(class_token, b), patch_embed(patch_rows)}, 1);
    tokens = add(tokens, positions);
    for (const EncoderBlock& block : blocks) tokens = block(tokens);
    tokens = final_norm(tokens);
    EncoderOutput out;
    out.global = reshape(slice(tokens, 1, 0, 1), {b, d});
    out.patches = slice(tokens, 1, 1, n + 1);
    out.grid_h = cfg_.grid_h();
    out.grid_w = cfg_.grid_w();
    return out;
}

ParameterSet VitEncoder::parameters() const {
    ParameterSet params;
    patch_embed.collect(params, "patch_embed.");
    params.add("class_token", class_token);
    params.add("position_embedding", position_embedding);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect(params, "blocks." + std::to_string(i) + ".");
    }
    final_norm.collect(params, "final_norm.");
    return params;
}

}  // namespace tsd
