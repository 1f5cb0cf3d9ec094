#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsd/eval/embeddings.hpp"
#include "tsd/harness/synth.hpp"
#include "tsd/model/decoder.hpp"
#include "tsd/model/encoder.hpp"
#include "tsd/model/losses.hpp"
#include "tsd/model/mask_generator.hpp"

namespace tsd {

/// Ablation ladder. Baseline: encoder only. M1: decoder without teacher.
/// M2: + teacher on ground-truth masks, distillation and visibility.
/// M3: + diversity. M4: + learnable masks and the mask loss.
enum class Variant { Baseline, M1, M2, M3, M4 };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;
    Variant variant = Variant::M4;
    std::size_t num_classes = 16;
    bool distill_stop_gradient = true;
    double triplet_margin = LossDefaults::triplet_margin;
    double parsing_smoothing = LossDefaults::parsing_smoothing;
    double focal_alpha = LossDefaults::focal_alpha;
    double focal_gamma = LossDefaults::focal_gamma;
    double visibility_min_fraction = 0.0;
    /// Epochs during which M4's teacher still sees ground-truth masks.
    std::size_t mask_warmup_epochs = 0;
};

/// A training batch: images plus their ground truth.
struct Batch {
    Tensor images;                       // [B, C, H, W]
    std::vector<std::size_t> labels;     // class index per image
    std::vector<std::int64_t> ids;       // identity per image (triplet grouping)
    std::vector<PartLabelMap> parts;     // ground-truth part grid per image
};

struct StepOutput {
    LossReport losses;
    std::vector<PartMask> teacher_masks;  // empty when the variant has no teacher
    Tensor teacher_attention;             // [B, P, N] or undefined
};

class TsdModel {
public:
    TsdModel(const ModelConfig& cfg, Rng& rng);

    /// Forward pass with every loss term the variant enables.
    StepOutput forward_train(const Batch& batch, std::size_t epoch);

    /// Inference features for a set of images [B, C, H, W]. Variants without
    /// a decoder emit zero parts; variants without a visibility head report
    /// every part visible.
    std::vector<EmbeddingRecord> embed(const Tensor& images);

    /// Student/teacher cross-attention maps [B, P, N] for visualization.
    TsdOutput attention(const Tensor& images, std::span<const PartMask> masks);

    /// Teacher masks this variant would use for the given ground truth.
    std::vector<PartMask> teacher_masks(const EncoderOutput& enc,
                                        std::span<const PartLabelMap> parts,
                                        std::size_t epoch) const;

    bool has_decoder() const noexcept { return cfg_.variant != Variant::Baseline; }
    bool has_teacher() const noexcept;
    const ModelConfig& config() const noexcept { return cfg_; }

    /// Every tensor saved in a checkpoint (parameters and running statistics).
    ParameterSet state() const;
    /// Tensors the optimizer updates.
    std::vector<Tensor> trainable() const;

    VitEncoder encoder;
    TsdDecoder decoder;
    MaskGenerator mask_generator;
    BnneckHead head_global, head_student, head_teacher, head_part;

private:
    ModelConfig cfg_;
};

}  // namespace tsd
