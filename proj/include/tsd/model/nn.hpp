#pragma once

#include <span>
#include <string>

#include "tsd/numeric/checkpoint.hpp"
#include "tsd/numeric/random.hpp"
#include "tsd/numeric/tensor.hpp"

namespace tsd {

/// y = x·W + b with W stored as [in, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear create(std::size_t in, std::size_t out, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm create(std::size_t dim);
    Tensor operator()(const Tensor& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

/// Two-layer GELU MLP.
struct FeedForward {
    Linear fc1;
    Linear fc2;

    static FeedForward create(std::size_t dim, std::size_t hidden, Rng& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(ParameterSet& params, const std::string& prefix) const;
};

struct AttentionResult {
    Tensor output;   // [B, Tq, D]
    Tensor weights;  // [B·heads, Tq, Tk]
};

/// [B, T, D] -> [B·heads, T, D/heads]
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B·heads, T, d] -> [B, T, heads·d]
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// softmax(q·kᵀ·logit_scale + bias)·v over grouped heads. `bias`, when
/// defined, is a constant [G, Tq, Tk] added before the softmax; -inf
/// entries remove a key from a query's support.
AttentionResult attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                               const Tensor& bias, double logit_scale);

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    /// `query` [B, Tq, D] attends over `context` [B, Tk, D]. `bias` is either
    /// undefined or a constant [B, Tq, Tk] shared by all heads.
    AttentionResult operator()(const Tensor& query, const Tensor& context,
                               const Tensor& bias = Tensor(), bool scaled = true) const;

    std::size_t heads() const noexcept { return heads_; }
    void collect(ParameterSet& params, const std::string& prefix) const;

    Linear query_proj, key_proj, value_proj, out_proj;

private:
    std::size_t heads_ = 1;
};

/// Repeats a [B, Tq, Tk] constant over heads -> [B·heads, Tq, Tk].
Tensor repeat_over_heads(const Tensor& bias, std::size_t heads);

}  // namespace tsd
