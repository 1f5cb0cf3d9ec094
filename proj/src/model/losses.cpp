#include "tsd/model/losses.hpp"

#include <cmath>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

Tensor distillation_loss(const Tensor& student, const Tensor& teacher, bool stop_gradient) {
    if (student.shape() != teacher.shape()) {
        throw DimensionError("distillation_loss: " + shape_string(student.shape()) + " vs " +
                             shape_string(teacher.shape()));
    }
    if (student.rank() < 2) throw DimensionError("distillation_loss expects [..., P, D]");
    Tensor target = stop_gradient ? teacher.detach() : teacher;
    Tensor cos = cosine_similarity(student, target);
    return add_scalar(scale(mean(cos), -1.0), 1.0);
}

Tensor diversity_loss(const Tensor& parts) {
    if (parts.rank() != 2 && parts.rank() != 3) {
        throw DimensionError("diversity_loss expects [P, D] or [B, P, D]");
    }
    const std::size_t p = parts.dim(-2);
    if (p < 2) throw ContractError("diversity_loss needs at least two parts");
    const std::size_t b = parts.rank() == 3 ? parts.dim(0) : 1;
    std::vector<double> off(p * p, 1.0);
    for (std::size_t i = 0; i < p; ++i) off[i * p + i] = 0.0;
    Tensor pairs = mul(pairwise_cosine(parts), Tensor(Shape{p, p}, std::move(off)));
    return scale(sum(pairs), 1.0 / static_cast<double>(b * p * (p - 1)));
}

Tensor focal_visibility_loss(const Tensor& visibility, std::span<const std::uint8_t> targets,
                             double alpha, double gamma) {
    return focal_loss(visibility, targets, alpha, gamma);
}

BnneckHead::BnneckHead(std::size_t features, std::size_t classes, Rng& rng)
    : gain(Shape{features}, 1.0),
      bias(Shape{features}, 0.0),
      running_mean(Shape{features}, 0.0),
      running_var(Shape{features}, 1.0) {
    if (features == 0 || classes == 0) throw ContractError("bnneck: sizes must be positive");
    classifier = truncated_normal({classes, features}, 0.001 * std::sqrt(1000.0 / features), rng);
}

Tensor BnneckHead::normalize(const Tensor& x, bool training) {
    if (training) {
        BatchNormResult r = batch_norm(x, gain, bias, eps);
        auto rm = running_mean.mutable_values();
        auto rv = running_var.mutable_values();
        const double n = static_cast<double>(x.dim(0));
        for (std::size_t f = 0; f < rm.size(); ++f) {
            rm[f] = (1 - momentum) * rm[f] + momentum * r.batch_mean[f];
            rv[f] = (1 - momentum) * rv[f] + momentum * r.batch_var[f] * n / (n - 1);
        }
        return r.output;
    }
    const auto rv = running_var.values();
    std::vector<double> inv(rv.size());
    for (std::size_t i = 0; i < rv.size(); ++i) inv[i] = 1.0 / std::sqrt(rv[i] + eps);
    Tensor centered = sub(x, running_mean.detach());
    const std::size_t f = inv.size();
    Tensor normed = mul(centered, Tensor(Shape{f}, std::move(inv)));
    return add(mul(normed, gain), bias);
}

Tensor BnneckHead::logits(const Tensor& x, bool training) {
    return matmul_transposed(normalize(x, training), classifier);
}

void BnneckHead::collect(ParameterSet& params, const std::string& prefix) const {
    params.add(prefix + "gain", gain);
    params.add(prefix + "bias", bias);
    params.add(prefix + "classifier", classifier);
    params.add(prefix + "running_mean", running_mean);
    params.add(prefix + "running_var", running_var);
}

Tensor ce_bnneck(const Tensor& feature, std::span<const std::size_t> labels, BnneckHead& head,
                 double smoothing) {
    if (feature.rank() != 2 || feature.dim(1) != head.features()) {
        throw DimensionError("ce_bnneck: feature " + shape_string(feature.shape()) +
                             " does not match head width " + std::to_string(head.features()));
    }
    for (std::size_t y : labels) {
        if (y >= head.classes()) {
            throw ContractError("ce_bnneck: label " + std::to_string(y) + " out of range");
        }
    }
    return cross_entropy(head.logits(feature, true), labels, smoothing);
}

Tensor triplet_batch_hard(const Tensor& features, std::span<const std::int64_t> ids,
                          double margin) {
    return batch_hard_triplet(euclidean_distances(features), ids, margin);
}

Tensor part_distance_matrix(const Tensor& parts, std::span<const std::uint8_t> visibility) {
    if (parts.rank() != 3) throw DimensionError("part_distance_matrix expects [B, P, D]");
    const std::size_t b = parts.dim(0), p = parts.dim(1);
    if (visibility.size() != b * p) {
        throw DimensionError("part_distance_matrix: visibility must hold B·P flags");
    }
    std::vector<double> w(p * b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            std::size_t shared = 0;
            for (std::size_t q = 0; q < p; ++q) {
                shared += visibility[i * p + q] && visibility[j * p + q];
            }
            for (std::size_t q = 0; q < p; ++q) {
                const bool use = shared == 0 || (visibility[i * p + q] && visibility[j * p + q]);
                if (use) w[(q * b + i) * b + j] = 1.0 / static_cast<double>(shared ? shared : p);
            }
        }
    }
    return sum(mul(part_euclidean_distances(parts), Tensor(Shape{p, b, b}, std::move(w))), 0);
}

Tensor part_avg_triplet(const Tensor& parts, std::span<const std::uint8_t> visibility,
                        std::span<const std::int64_t> ids, double margin) {
    return batch_hard_triplet(part_distance_matrix(parts, visibility), ids, margin);
}

double LossReport::value(const std::string& name) const {
    for (const LossTerm& t : terms) {
        if (t.name == name) return t.value.item();
    }
    return 0.0;
}

bool LossReport::has(const std::string& name) const {
    for (const LossTerm& t : terms) {
        if (t.name == name) return true;
    }
    return false;
}

LossReport total_loss(std::vector<LossTerm> terms) {
    LossReport report;
    Tensor total = Tensor::scalar(0.0);
    for (const LossTerm& t : terms) {
        if (t.value.numel() != 1) throw DimensionError("loss term " + t.name + " is not scalar");
        if (report.has(t.name)) throw ContractError("duplicate loss term " + t.name);
        total = add(total, reshape(t.value, {}));
        report.terms.push_back(t);
    }
    report.total = total;
    return report;
}

}  // namespace tsd
