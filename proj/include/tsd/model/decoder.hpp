#pragma once

#include <span>
#include <vector>

#include "tsd/model/encoder.hpp"
#include "tsd/model/nn.hpp"
#include "tsd/model/part_mask.hpp"

namespace tsd {

struct DecoderConfig {
    std::size_t parts = 8;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ffn_dim = 256;
    std::size_t layers = 1;
    /// Divide teacher logits by sqrt(d_head) like the student. Turning this
    /// off gives the literal unscaled masked-attention logits.
    bool scale_teacher_logits = true;
    /// An all-zero mask row attends everywhere instead of raising.
    bool empty_part_fallback = true;
    /// Residual connections around cross-attention and the feed-forward
    /// block. Off: part features are FFN(LN(attention output)) alone.
    bool residual = true;

    void validate() const;
};

struct DecoderOutput {
    Tensor parts;      // [B, P, D]
    Tensor concat;     // [B, P·D], rows of `parts` in part order
    Tensor attention;  // [B, P, N] cross-attention weights averaged over heads (constant)
};

struct TsdOutput {
    DecoderOutput student;
    DecoderOutput teacher;  // undefined tensors when no masks were given
    bool has_teacher = false;
};

/// Constant [B, P, N] logit bias: 0 where the mask admits a patch, -inf
/// elsewhere. Empty rows become all-zero under the fallback and raise
/// DegenerateMaskError without it.
Tensor mask_logit_bias(std::span<const PartMask> masks, bool empty_part_fallback);

/// Multi-head cross-attention of already-projected part queries q [B, P, D]
/// over keys/values [B, N, D], restricted by `masks` when non-empty.
AttentionResult masked_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                       std::span<const PartMask> masks, std::size_t heads,
                                       bool scaled, bool empty_part_fallback = true);

/// Teacher-student decoder. Both branches run the same layers on the same
/// parameter tensors; the teacher only adds a mask bias to its
/// cross-attention logits.
class TsdDecoder {
public:
    struct Layer {
        LayerNorm self_norm;
        MultiHeadAttention self_attn;
        LayerNorm cross_norm;
        MultiHeadAttention cross_attn;
        LayerNorm ffn_norm;
        FeedForward ffn;

        Layer(const DecoderConfig& cfg, Rng& rng);
        void collect(ParameterSet& params, const std::string& prefix) const;
    };

    TsdDecoder(const DecoderConfig& cfg, Rng& rng);

    /// Self-attention over [class token, part queries]: [B, D] -> [B, P+1, D].
    Tensor query_self_attention(const Tensor& global) const;

    DecoderOutput student_cross_attention(const Tensor& tokens, const Tensor& patches) const;
    DecoderOutput teacher_masked_cross_attention(const Tensor& tokens, const Tensor& patches,
                                                 std::span<const PartMask> masks) const;

    /// Shared self-attention once, then both branches. With no masks only
    /// the student runs.
    TsdOutput forward(const EncoderOutput& enc, std::span<const PartMask> masks) const;

    /// Per-part visibility probabilities [B, P] from student part features.
    Tensor visibility(const DecoderOutput& student) const;

    const DecoderConfig& config() const noexcept { return cfg_; }
    ParameterSet parameters() const;

    Tensor queries;  // [P, D]
    std::vector<Layer> layers;
    Linear visibility_head;  // D -> 1, shared across parts

private:
    DecoderOutput run_branch(Tensor tokens, const Tensor& patches, const Tensor& bias,
                             bool scaled) const;

    DecoderConfig cfg_;
};

}  // namespace tsd
