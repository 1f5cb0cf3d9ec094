#include "tsd/harness/synth.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "tsd/numeric/checkpoint.hpp"
#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/random.hpp"

namespace tsd {

void SynthConfig::validate() const {
    if (patch == 0 || image_h % patch || image_w % patch) {
        throw ContractError("synth: image size must be a multiple of the patch size");
    }
    if (parts == 0 || grid_h() % parts) {
        throw ContractError("synth: patch rows must split evenly into parts");
    }
    if (person_columns == 0 || person_columns > grid_w()) {
        throw ContractError("synth: person wider than the image");
    }
    if (palette < 2 || cameras == 0 || channels == 0 || images_per_identity == 0) {
        throw ContractError("synth: palette, cameras, channels and images must be positive");
    }
    if (train_identities + test_identities < 2) throw ContractError("synth: need two identities");
    if (npo_rate < 0 || ntp_rate < 0 || npo_rate + ntp_rate > 1) {
        throw ContractError("synth: occlusion rates must be probabilities summing to <= 1");
    }
    if (min_occluded_bands == 0 || min_occluded_bands > max_occluded_bands ||
        max_occluded_bands >= parts) {
        throw ContractError("synth: occluded band range must lie within 1..P-1");
    }
    if (query_images_per_identity > images_per_identity) {
        throw ContractError("synth: more query images than images per identity");
    }
}

namespace {

// Texture of one band: [C, band_h, person_w] pixels.
using Texture = std::vector<double>;

struct Painter {
    const SynthConfig& cfg;
    std::size_t band_h, person_w;

    Texture make_texture(Rng& rng) const {
        std::uniform_real_distribution<double> base(-1.0, 1.0), amp(0.2, 0.6);
        std::uniform_int_distribution<int> period(2, 4), orient(0, 1);
        Texture t(cfg.channels * band_h * person_w);
        const int per = period(rng);
        const bool vertical = orient(rng);
        for (std::size_t c = 0; c < cfg.channels; ++c) {
            const double mu = base(rng), a = amp(rng);
            for (std::size_t y = 0; y < band_h; ++y)
                for (std::size_t x = 0; x < person_w; ++x) {
                    const std::size_t k = vertical ? x : y;
                    const double stripe = (k / static_cast<std::size_t>(per)) % 2 ? a : -a;
                    t[(c * band_h + y) * person_w + x] = mu + stripe;
                }
        }
        return t;
    }

    void paint(std::vector<double>& img, const Texture& t, std::size_t band, std::size_t col0) const {
        const std::size_t h = cfg.image_h, w = cfg.image_w;
        for (std::size_t c = 0; c < cfg.channels; ++c)
            for (std::size_t y = 0; y < band_h; ++y)
                for (std::size_t x = 0; x < person_w; ++x) {
                    const std::size_t px = col0 + x;
                    if (px >= w) continue;
                    img[(c * h + band * band_h + y) * w + px] = t[(c * band_h + y) * person_w + x];
                }
    }
};

}  // namespace

SyntheticDataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t band_rows = cfg.grid_h() / cfg.parts;  // patch rows per band
    Painter painter{cfg, band_rows * cfg.patch, cfg.person_columns * cfg.patch};

    std::vector<std::vector<Texture>> palettes(cfg.parts);
    for (auto& pal : palettes)
        for (std::size_t k = 0; k < cfg.palette; ++k) pal.push_back(painter.make_texture(rng));
    const Texture obstacle = [&] {
        Texture t = painter.make_texture(rng);
        for (double& v : t) v = 0.5 * v + 0.8;  // bright, low-contrast slab
        return t;
    }();

    // Identities are distinct band-texture combinations differing in at
    // least two bands from every other identity.
    const std::size_t total_ids = cfg.train_identities + cfg.test_identities;
    std::vector<std::vector<std::size_t>> codes;
    for (std::size_t attempts = 0; codes.size() < total_ids; ++attempts) {
        if (attempts > 100000) throw ContractError("synth: palette too small for identity count");
        std::vector<std::size_t> code(cfg.parts);
        for (auto& c : code) c = uniform_index(rng, cfg.palette);
        const bool far = std::ranges::all_of(codes, [&](const auto& other) {
            std::size_t diff = 0;
            for (std::size_t p = 0; p < cfg.parts; ++p) diff += code[p] != other[p];
            return diff >= 2;
        });
        if (far) codes.push_back(std::move(code));
    }

    std::vector<double> cam_shift(cfg.cameras * cfg.channels);
    std::uniform_real_distribution<double> shift(-cfg.camera_shift, cfg.camera_shift);
    for (double& s : cam_shift) s = shift(rng);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t gh = cfg.grid_h(), gw = cfg.grid_w();
    const std::size_t max_col = gw - cfg.person_columns;

    SyntheticDataset data;
    for (std::size_t id = 0; id < total_ids; ++id) {
        const bool train = id < cfg.train_identities;
        for (std::size_t k = 0; k < cfg.images_per_identity; ++k) {
            SyntheticScene s;
            s.identity = static_cast<std::int64_t>(id);
            s.camera = static_cast<std::int64_t>(k % cfg.cameras);
            s.split = train ? Split::Train
                            : (k < cfg.query_images_per_identity ? Split::Query : Split::Gallery);
            s.image_id = "id" + std::to_string(id) + "_" + std::to_string(k);

            std::vector<double> img(cfg.channels * cfg.image_h * cfg.image_w);
            for (double& v : img) v = 0.3 * noise(rng);
            const std::size_t col = static_cast<std::size_t>(uniform_index(rng, max_col + 1));
            for (std::size_t b = 0; b < cfg.parts; ++b) {
                painter.paint(img, palettes[b][codes[id][b]], b, col * cfg.patch);
            }
            s.labels.labels.assign(gh * gw, 0);
            for (std::size_t gy = 0; gy < gh; ++gy)
                for (std::size_t gx = col; gx < col + cfg.person_columns; ++gx)
                    s.labels.labels[gy * gw + gx] = static_cast<int>(gy / band_rows) + 1;

            const double u = unit(rng);
            s.occlusion = u < cfg.npo_rate ? Occlusion::NPO
                        : u < cfg.npo_rate + cfg.ntp_rate ? Occlusion::NTP
                                                          : Occlusion::Holistic;
            if (s.occlusion != Occlusion::Holistic) {
                const std::size_t len = cfg.min_occluded_bands +
                    uniform_index(rng, cfg.max_occluded_bands - cfg.min_occluded_bands + 1);
                const std::size_t start = uniform_index(rng, cfg.parts - len + 1);
                if (s.occlusion == Occlusion::NPO) {
                    // A slab across the full width: one paint from each edge.
                    for (std::size_t b = start; b < start + len; ++b) {
                        painter.paint(img, obstacle, b, 0);
                        painter.paint(img, obstacle, b, cfg.image_w - painter.person_w);
                    }
                } else {
                    // Another pedestrian, vertically misaligned with the target.
                    std::size_t other = uniform_index(rng, total_ids - 1);
                    if (other >= id) ++other;
                    const std::size_t offset = 1 + uniform_index(rng, cfg.parts - 1);
                    const std::size_t ocol = uniform_index(rng, max_col + 1);
                    for (std::size_t b = start; b < start + len; ++b) {
                        const std::size_t src = (b + offset) % cfg.parts;
                        painter.paint(img, palettes[src][codes[other][src]], b, ocol * cfg.patch);
                    }
                }
                for (std::size_t b = start; b < start + len; ++b)
                    for (std::size_t r = b * band_rows; r < (b + 1) * band_rows; ++r)
                        for (std::size_t gx = 0; gx < gw; ++gx) s.labels.labels[r * gw + gx] = 0;
            }

            for (std::size_t c = 0; c < cfg.channels; ++c) {
                const double sh = cam_shift[static_cast<std::size_t>(s.camera) * cfg.channels + c];
                for (std::size_t i = 0; i < cfg.image_h * cfg.image_w; ++i) {
                    img[c * cfg.image_h * cfg.image_w + i] += sh + cfg.noise * noise(rng);
                }
            }
            s.image = Tensor(Shape{cfg.channels, cfg.image_h, cfg.image_w}, std::move(img));
            data.scenes.push_back(std::move(s));
        }
    }
    return data;
}

Manifest SyntheticDataset::manifest() const {
    Manifest m;
    m.reserve(scenes.size());
    for (const SyntheticScene& s : scenes) {
        m.push_back({s.image_id, s.identity, s.camera, s.split,
                     s.split == Split::Train ? Occlusion::Unlabeled : s.occlusion});
    }
    return m;
}

const SyntheticScene* SyntheticDataset::find(const std::string& image_id) const {
    for (const SyntheticScene& s : scenes) {
        if (s.image_id == image_id) return &s;
    }
    return nullptr;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                  std::size_t grid_h, std::size_t grid_w) {
    std::filesystem::create_directories(dir);
    // Training images keep their occlusion label on disk so that reloading
    // reproduces the scenes exactly.
    Manifest m;
    for (const SyntheticScene& s : data.scenes) {
        m.push_back({s.image_id, s.identity, s.camera, s.split, s.occlusion});
    }
    save_manifest(dir / "manifest.csv", m);
    std::vector<NamedTensor> images;
    for (const SyntheticScene& s : data.scenes) images.push_back({s.image_id, s.image});
    save_tensors(dir / "images.bin", images);
    std::ofstream parts(dir / "parts.txt");
    if (!parts) throw IoError("cannot write " + (dir / "parts.txt").string());
    for (const SyntheticScene& s : data.scenes) {
        if (s.labels.size() != grid_h * grid_w) {
            throw DimensionError("part grid of " + s.image_id + " is not " +
                                 std::to_string(grid_h) + "x" + std::to_string(grid_w));
        }
        parts << s.image_id << ' ' << grid_h << ' ' << grid_w;
        for (int l : s.labels.labels) parts << ' ' << l;
        parts << '\n';
    }
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
    const Manifest m = load_manifest(dir / "manifest.csv");
    std::unordered_map<std::string, Tensor> images;
    for (NamedTensor& t : load_tensors(dir / "images.bin")) images[t.name] = t.tensor;
    std::unordered_map<std::string, PartLabelMap> labels;
    std::ifstream in(dir / "parts.txt");
    if (!in) throw IoError("cannot open " + (dir / "parts.txt").string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id;
        std::size_t gh = 0, gw = 0;
        if (!(ls >> id >> gh >> gw)) throw ValidationError("bad parts.txt line: " + line);
        PartLabelMap map;
        map.labels.resize(gh * gw);
        for (int& l : map.labels) {
            if (!(ls >> l)) throw ValidationError("short part grid for " + id);
        }
        labels[id] = std::move(map);
    }
    SyntheticDataset data;
    for (const ManifestRecord& r : m) {
        auto img = images.find(r.image_id);
        auto lab = labels.find(r.image_id);
        if (img == images.end() || lab == labels.end()) {
            throw ValidationError("image " + r.image_id + " lacks pixels or a part grid");
        }
        data.scenes.push_back({r.image_id, r.identity, r.camera, r.split, r.occlusion,
                               img->second, lab->second});
    }
    return data;
}

}  // namespace tsd
