#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsd/harness/model.hpp"
#include "tsd/harness/synth.hpp"

namespace tsd {

/// Binary 8-bit greyscale image; values are clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const double> values,
               std::size_t height, std::size_t width);

struct AttentionMaps {
    std::size_t parts = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::vector<double> student;  // [P, N]
    std::vector<double> teacher;  // [P, N], empty without a teacher
};

/// Head-averaged cross-attention of one scene. The teacher sees the masks
/// the variant would train with at `epoch`.
AttentionMaps scene_attention(TsdModel& model, const SyntheticScene& scene, std::size_t grid_h,
                              std::size_t grid_w, std::size_t epoch);

/// Writes `<stem>_student.pgm`, `<stem>_teacher.pgm` (parts side by side,
/// each map normalized to its maximum and upscaled by `zoom`) and
/// `<stem>_attention.txt` (one row per branch and part, N columns).
std::vector<std::filesystem::path> write_attention(const std::filesystem::path& dir,
                                                   const std::string& stem,
                                                   const AttentionMaps& maps, std::size_t zoom = 8);

}  // namespace tsd
