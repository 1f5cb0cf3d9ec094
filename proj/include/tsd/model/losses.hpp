#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsd/numeric/checkpoint.hpp"
#include "tsd/numeric/random.hpp"
#include "tsd/numeric/tensor.hpp"

namespace tsd {

struct LossDefaults {
    static constexpr double triplet_margin = 0.3;
    static constexpr double parsing_smoothing = 0.1;
    static constexpr double focal_alpha = 0.25;
    static constexpr double focal_gamma = 2.0;
};

/// Mean over parts (and batch) of 1 - cos(student_p, teacher_p). Inputs are
/// [..., P, D]. With `stop_gradient` the teacher is a constant target.
Tensor distillation_loss(const Tensor& student, const Tensor& teacher, bool stop_gradient = true);

/// Mean cosine similarity over ordered pairs of distinct parts. [P, D] or
/// [B, P, D]; needs P >= 2.
Tensor diversity_loss(const Tensor& parts);

/// Focal loss on per-part visibility probabilities, averaged over parts.
Tensor focal_visibility_loss(const Tensor& visibility, std::span<const std::uint8_t> targets,
                             double alpha = LossDefaults::focal_alpha,
                             double gamma = LossDefaults::focal_gamma);

/// Batch norm followed by a bias-free classifier.
class BnneckHead {
public:
    BnneckHead() = default;
    BnneckHead(std::size_t features, std::size_t classes, Rng& rng);

    /// Training mode uses batch statistics and updates the running ones.
    Tensor normalize(const Tensor& x, bool training);
    Tensor logits(const Tensor& x, bool training);

    std::size_t features() const noexcept { return gain.numel(); }
    std::size_t classes() const { return classifier.dim(0); }
    void collect(ParameterSet& params, const std::string& prefix) const;

    Tensor gain;        // [F]
    Tensor bias;        // [F], held at zero (not trained)
    Tensor classifier;  // [K, F]
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

Tensor ce_bnneck(const Tensor& feature, std::span<const std::size_t> labels, BnneckHead& head,
                 double smoothing = 0.0);

/// Batch-hard triplet loss on Euclidean distances of [B, D] features.
Tensor triplet_batch_hard(const Tensor& features, std::span<const std::int64_t> ids,
                          double margin = LossDefaults::triplet_margin);

/// [B, P, D] -> [B, B]: mean per-part distance over mutually visible parts,
/// or over all parts when a pair shares none. `visibility` is [B·P].
Tensor part_distance_matrix(const Tensor& parts, std::span<const std::uint8_t> visibility);

Tensor part_avg_triplet(const Tensor& parts, std::span<const std::uint8_t> visibility,
                        std::span<const std::int64_t> ids,
                        double margin = LossDefaults::triplet_margin);

struct LossTerm {
    std::string name;
    Tensor value;
};

/// Named scalar terms and their unweighted sum.
struct LossReport {
    std::vector<LossTerm> terms;
    Tensor total;

    /// Value of the named term, or 0 when the term is absent.
    double value(const std::string& name) const;
    bool has(const std::string& name) const;
};

LossReport total_loss(std::vector<LossTerm> terms);

}  // namespace tsd
