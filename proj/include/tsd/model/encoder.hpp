#pragma once

#include <vector>

#include "tsd/model/nn.hpp"

namespace tsd {

struct EncoderConfig {
    std::size_t image_h = 256;
    std::size_t image_w = 128;
    std::size_t channels = 3;
    std::size_t patch_size = 16;
    /// 16 gives non-overlapping patches; 12 is the overlapping variant.
    std::size_t stride = 16;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t dim = 64;
    std::size_t ffn_dim = 256;
    /// Standard deviation of the initial position embeddings.
    double position_init_std = 0.02;

    // Patches start every `stride` pixels; trailing pixels that cannot
    // hold a full patch are dropped.
    std::size_t grid_h() const { return (image_h - patch_size) / stride + 1; }
    std::size_t grid_w() const { return (image_w - patch_size) / stride + 1; }
    std::size_t num_patches() const { return grid_h() * grid_w(); }
    std::size_t patch_features() const { return channels * patch_size * patch_size; }

    void validate() const;
};

struct EncoderOutput {
    Tensor global;   // [B, D]   class-token output
    Tensor patches;  // [B, N, D]
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
};

/// Flattens every patch of [B, C, H, W] (or a single [C, H, W]) images into
/// rows of a constant [B, N, C·p·p] tensor, channel-major within a patch.
Tensor extract_patches(const Tensor& images, const EncoderConfig& cfg);

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)).
struct EncoderBlock {
    LayerNorm norm1;
    MultiHeadAttention attn;
    LayerNorm norm2;
    FeedForward ffn;

    EncoderBlock(std::size_t dim, std::size_t heads, std::size_t ffn_dim, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

/// Small ViT: strided linear patch embedding, class token, learned 1-D
/// position embeddings, `depth` pre-norm blocks and a final LayerNorm.
class VitEncoder {
public:
    VitEncoder(const EncoderConfig& cfg, Rng& rng);

    EncoderOutput encode(const Tensor& images) const;
    /// Encodes already-extracted patch rows [B, N, C·p·p].
    EncoderOutput encode_patches(const Tensor& patch_rows) const;
    /// As above with an explicit [N+1, D] position table in place of the
    /// learned one (row 0 belongs to the class token).
    EncoderOutput encode_patches(const Tensor& patch_rows, const Tensor& positions) const;

    const EncoderConfig& config() const noexcept { return cfg_; }
    ParameterSet parameters() const;

    Linear patch_embed;
    Tensor class_token;         // [1, D]
    Tensor position_embedding;  // [N+1, D]
    std::vector<EncoderBlock> blocks;
    LayerNorm final_norm;

private:
    EncoderConfig cfg_;
};

}  // namespace tsd
