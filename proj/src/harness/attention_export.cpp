#include "tsd/harness/attention_export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/ops.hpp"

namespace tsd {

void write_pgm(const std::filesystem::path& path, std::span<const double> values,
               std::size_t height, std::size_t width) {
    if (values.size() != height * width) throw DimensionError("pgm: value count is not height x width");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (double v : values) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
}

AttentionMaps scene_attention(TsdModel& model, const SyntheticScene& scene, std::size_t grid_h,
                              std::size_t grid_w, std::size_t epoch) {
    if (!model.has_decoder()) throw ContractError("the baseline variant has no decoder attention");
    const Shape& s = scene.image.shape();
    const Tensor image = reshape(scene.image, {1, s[0], s[1], s[2]});
    AttentionMaps maps;
    maps.parts = model.config().decoder.parts;
    maps.grid_h = grid_h;
    maps.grid_w = grid_w;
    std::vector<PartMask> masks;
    if (model.has_teacher()) {
        NoGradGuard ng;
        const EncoderOutput enc = model.encoder.encode(image);
        const std::vector<PartLabelMap> labels{scene.labels};
        masks = model.teacher_masks(enc, labels, epoch);
    }
    const TsdOutput out = model.attention(image, masks);
    if (out.student.attention.dim(2) != grid_h * grid_w) {
        throw DimensionError("attention width does not match the patch grid");
    }
    const auto sv = out.student.attention.values();
    maps.student.assign(sv.begin(), sv.end());
    if (out.has_teacher) {
        const auto tv = out.teacher.attention.values();
        maps.teacher.assign(tv.begin(), tv.end());
    }
    return maps;
}

namespace {

std::vector<double> tile(const std::vector<double>& att, const AttentionMaps& m, std::size_t zoom,
                         std::size_t& height, std::size_t& width) {
    const std::size_t n = m.grid_h * m.grid_w, gap = 1;
    height = m.grid_h * zoom;
    width = m.parts * (m.grid_w * zoom + gap) - gap;
    std::vector<double> img(height * width, 1.0);
    for (std::size_t p = 0; p < m.parts; ++p) {
        const double peak = *std::max_element(att.begin() + static_cast<std::ptrdiff_t>(p * n),
                                              att.begin() + static_cast<std::ptrdiff_t>((p + 1) * n));
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < m.grid_w * zoom; ++x) {
                const double v = att[p * n + (y / zoom) * m.grid_w + x / zoom];
                img[y * width + p * (m.grid_w * zoom + gap) + x] = peak > 0 ? v / peak : 0.0;
            }
    }
    return img;
}

}  // namespace

std::vector<std::filesystem::path> write_attention(const std::filesystem::path& dir,
                                                   const std::string& stem,
                                                   const AttentionMaps& maps, std::size_t zoom) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    std::size_t h = 0, w = 0;
    for (const auto& [name, att] : {std::pair{"student", &maps.student}, std::pair{"teacher", &maps.teacher}}) {
        if (att->empty()) continue;
        const std::vector<double> img = tile(*att, maps, zoom, h, w);
        const auto path = dir / (stem + "_" + name + ".pgm");
        write_pgm(path, img, h, w);
        written.push_back(path);
    }
    const auto txt = dir / (stem + "_attention.txt");
    std::ofstream out(txt);
    if (!out) throw IoError("cannot write " + txt.string());
    out << "# grid " << maps.grid_h << "x" << maps.grid_w << ", rows: branch part, then N weights\n";
    out << std::setprecision(10);
    const std::size_t n = maps.grid_h * maps.grid_w;
    for (const auto& [name, att] : {std::pair{"student", &maps.student}, std::pair{"teacher", &maps.teacher}}) {
        if (att->empty()) continue;
        for (std::size_t p = 0; p < maps.parts; ++p) {
            out << name << ' ' << p;
            for (std::size_t i = 0; i < n; ++i) out << ' ' << (*att)[p * n + i];
            out << '\n';
        }
    }
    written.push_back(txt);
    return written;
}

}  // namespace tsd
