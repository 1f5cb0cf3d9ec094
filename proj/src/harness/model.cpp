#include "tsd/harness/model.hpp"

#include <algorithm>
#include <cctype>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::M1: return "m1";
        case Variant::M2: return "m2";
        case Variant::M3: return "m3";
        case Variant::M4: return "m4";
    }
    return "m4";
}

Variant parse_variant(std::string_view text) {
    std::string t(text);
    std::ranges::transform(t, t.begin(), [](unsigned char c) { return std::tolower(c); });
    for (Variant v : {Variant::Baseline, Variant::M1, Variant::M2, Variant::M3, Variant::M4}) {
        if (t == to_string(v)) return v;
    }
    throw ValidationError("unknown variant '" + std::string(text) + "'");
}

namespace {

ModelConfig checked(ModelConfig cfg) {
    cfg.encoder.validate();
    cfg.decoder.dim = cfg.encoder.dim;
    cfg.decoder.validate();
    if (cfg.num_classes < 2) throw ContractError("model needs at least two classes");
    return cfg;
}

}  // namespace

TsdModel::TsdModel(const ModelConfig& cfg, Rng& rng)
    : encoder(checked(cfg).encoder, rng),
      decoder(checked(cfg).decoder, rng),
      mask_generator(cfg.decoder.parts, cfg.encoder.dim, rng),
      head_global(cfg.encoder.dim, cfg.num_classes, rng),
      head_student(cfg.decoder.parts * cfg.encoder.dim, cfg.num_classes, rng),
      head_teacher(cfg.decoder.parts * cfg.encoder.dim, cfg.num_classes, rng),
      head_part(cfg.decoder.parts * cfg.encoder.dim, cfg.num_classes, rng),
      cfg_(checked(cfg)) {}

bool TsdModel::has_teacher() const noexcept {
    return cfg_.variant == Variant::M2 || cfg_.variant == Variant::M3 || cfg_.variant == Variant::M4;
}

std::vector<PartMask> TsdModel::teacher_masks(const EncoderOutput& enc,
                                              std::span<const PartLabelMap> parts,
                                              std::size_t epoch) const {
    const std::size_t p = cfg_.decoder.parts;
    std::vector<PartMask> masks;
    if (cfg_.variant == Variant::M4 && epoch >= cfg_.mask_warmup_epochs) {
        NoGradGuard ng;
        masks = binarize(mask_generator.heatmaps(enc.patches.detach())).masks;
    } else {
        for (const PartLabelMap& l : parts) masks.push_back(PartMask::from_labels(l, p));
    }
    return masks;
}

StepOutput TsdModel::forward_train(const Batch& batch, std::size_t epoch) {
    const std::size_t b = batch.labels.size(), p = cfg_.decoder.parts;
    if (batch.ids.size() != b || batch.parts.size() != b || batch.images.dim(0) != b) {
        throw DimensionError("batch fields disagree in size");
    }
    EncoderOutput enc = encoder.encode(batch.images);
    const std::size_t n = enc.patches.dim(1);
    for (const PartLabelMap& l : batch.parts) {
        if (l.size() != n) throw DimensionError("part grid size differs from patch count");
    }

    std::vector<LossTerm> terms;
    terms.push_back({"ce_global", ce_bnneck(enc.global, batch.labels, head_global)});
    terms.push_back({"tri_global", triplet_batch_hard(enc.global, batch.ids, cfg_.triplet_margin)});

    StepOutput out;
    if (!has_decoder()) {
        out.losses = total_loss(std::move(terms));
        return out;
    }

    // Ground-truth visibility; M1 uses no parsing information at all.
    std::vector<std::uint8_t> vis(b * p, 1);
    if (has_teacher()) {
        for (std::size_t s = 0; s < b; ++s) {
            auto v = visibility_labels(batch.parts[s], p, cfg_.visibility_min_fraction);
            std::ranges::copy(v, vis.begin() + static_cast<std::ptrdiff_t>(s * p));
        }
    }

    if (has_teacher()) out.teacher_masks = teacher_masks(enc, batch.parts, epoch);
    TsdOutput dec = decoder.forward(enc, out.teacher_masks);

    terms.push_back({"ce_student", ce_bnneck(dec.student.concat, batch.labels, head_student)});
    terms.push_back({"tri_student",
                     part_avg_triplet(dec.student.parts, vis, batch.ids, cfg_.triplet_margin)});

    if (has_teacher()) {
        // Parts whose teacher mask is empty fell back to full attention and
        // count as invisible.
        for (std::size_t s = 0; s < b; ++s) {
            std::vector<std::uint8_t> v(vis.begin() + static_cast<std::ptrdiff_t>(s * p),
                                        vis.begin() + static_cast<std::ptrdiff_t>((s + 1) * p));
            suppress_empty_parts(out.teacher_masks[s], v);
            std::ranges::copy(v, vis.begin() + static_cast<std::ptrdiff_t>(s * p));
        }
        out.teacher_attention = dec.teacher.attention;
        terms.push_back({"ce_teacher", ce_bnneck(dec.teacher.concat, batch.labels, head_teacher)});
        terms.push_back({"tri_teacher",
                         part_avg_triplet(dec.teacher.parts, vis, batch.ids, cfg_.triplet_margin)});
    }

    if (cfg_.variant == Variant::M4) {
        PartHeatmaps h = mask_generator.heatmaps(enc.patches);
        PooledParts pooled = pool_parts(enc.patches, h);
        terms.push_back({"ce_part", ce_bnneck(pooled.concat, batch.labels, head_part)});
        terms.push_back({"tri_part",
                         part_avg_triplet(pooled.parts, vis, batch.ids, cfg_.triplet_margin)});
        std::vector<std::size_t> patch_labels;
        patch_labels.reserve(b * n);
        for (const PartLabelMap& l : batch.parts)
            for (int x : l.labels) patch_labels.push_back(static_cast<std::size_t>(x));
        terms.push_back({"parsing", cross_entropy(reshape(h.logits, {b * n, p + 1}), patch_labels,
                                                  cfg_.parsing_smoothing)});
    }

    if (has_teacher()) {
        terms.push_back({"distill", distillation_loss(dec.student.parts, dec.teacher.parts,
                                                      cfg_.distill_stop_gradient)});
        if (cfg_.variant == Variant::M3 || cfg_.variant == Variant::M4) {
            terms.push_back({"diversity", diversity_loss(dec.teacher.parts)});
        }
        terms.push_back({"visibility", focal_visibility_loss(decoder.visibility(dec.student), vis,
                                                             cfg_.focal_alpha, cfg_.focal_gamma)});
    }
    out.losses = total_loss(std::move(terms));
    return out;
}

std::vector<EmbeddingRecord> TsdModel::embed(const Tensor& images) {
    NoGradGuard ng;
    EncoderOutput enc = encoder.encode(images);
    const std::size_t b = enc.global.dim(0), d = cfg_.encoder.dim;
    std::vector<EmbeddingRecord> out(b);
    const auto g = enc.global.values();
    for (std::size_t s = 0; s < b; ++s) {
        out[s].global.assign(g.begin() + static_cast<std::ptrdiff_t>(s * d),
                             g.begin() + static_cast<std::ptrdiff_t>((s + 1) * d));
    }
    if (!has_decoder()) return out;

    const std::size_t p = cfg_.decoder.parts;
    TsdOutput dec = decoder.forward(enc, {});
    const auto parts = dec.student.parts.values();
    std::vector<double> vis(b * p, 1.0);
    if (has_teacher()) {
        const Tensor v = decoder.visibility(dec.student);
        vis.assign(v.values().begin(), v.values().end());
    }
    for (std::size_t s = 0; s < b; ++s) {
        out[s].parts.assign(parts.begin() + static_cast<std::ptrdiff_t>(s * p * d),
                            parts.begin() + static_cast<std::ptrdiff_t>((s + 1) * p * d));
        out[s].visibility.assign(vis.begin() + static_cast<std::ptrdiff_t>(s * p),
                                 vis.begin() + static_cast<std::ptrdiff_t>((s + 1) * p));
    }
    return out;
}

TsdOutput TsdModel::attention(const Tensor& images, std::span<const PartMask> masks) {
    NoGradGuard ng;
    return decoder.forward(encoder.encode(images), masks);
}

ParameterSet TsdModel::state() const {
    ParameterSet s;
    s.append(encoder.parameters(), "encoder.");
    s.append(decoder.parameters(), "decoder.");
    ParameterSet rest;
    mask_generator.collect(rest, "mask_generator.");
    head_global.collect(rest, "bnneck.global.");
    head_student.collect(rest, "bnneck.student.");
    head_teacher.collect(rest, "bnneck.teacher.");
    head_part.collect(rest, "bnneck.part.");
    s.append(rest);
    return s;
}

std::vector<Tensor> TsdModel::trainable() const {
    std::vector<Tensor> out;
    const ParameterSet all = state();
    for (const NamedTensor& e : all.entries()) {
        if (e.name.ends_with("running_mean") || e.name.ends_with("running_var")) continue;
        if (e.name.starts_with("bnneck.") && e.name.ends_with(".bias")) continue;
        out.push_back(e.tensor);
    }
    return out;
}

}  // namespace tsd
