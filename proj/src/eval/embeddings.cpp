#include "tsd/eval/embeddings.hpp"

#include <array>
#include <fstream>

#include "tsd/numeric/binary_io.hpp"
#include "tsd/numeric/errors.hpp"

namespace tsd {

namespace {
constexpr std::array<char, 8> kMagic{'T', 'S', 'D', 'E', 'M', 'B', 'D', '\0'};
}

void EmbeddingSet::check() const {
    for (const EmbeddingRecord& r : records) {
        if (r.global.size() != dim || r.parts.size() != parts * dim ||
            r.visibility.size() != parts) {
            throw DimensionError("embedding " + r.image_id + " does not match dim " +
                                 std::to_string(dim) + " with " + std::to_string(parts) +
                                 " parts");
        }
    }
}

const EmbeddingRecord* EmbeddingSet::find(const std::string& image_id) const {
    for (const EmbeddingRecord& r : records) {
        if (r.image_id == image_id) return &r;
    }
    return nullptr;
}

std::filesystem::path embedding_index_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".index";
    return p;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
    using namespace binary;
    set.check();
    std::ofstream out(path, std::ios::binary);
    std::ofstream index(embedding_index_path(path));
    if (!out || !index) throw IoError("cannot write embeddings to " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kEmbeddingFileVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.dim));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.parts));
    put_le<std::uint64_t>(out, set.records.size());
    for (const EmbeddingRecord& r : set.records) {
        index << r.image_id << ' ' << r.identity << ' ' << r.camera << ' '
              << to_string(r.occlusion) << ' ' << static_cast<std::uint64_t>(out.tellp()) << '\n';
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.image_id.size()));
        out.write(r.image_id.data(), static_cast<std::streamsize>(r.image_id.size()));
        put_i64(out, r.identity);
        put_i64(out, r.camera);
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.occlusion));
        for (double v : r.global) put_f64(out, v);
        for (double v : r.parts) put_f64(out, v);
        for (double v : r.visibility) put_f64(out, v);
    }
    if (!out || !index) throw IoError("failed writing embeddings to " + path.string());
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    using namespace binary;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embeddings " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError(path.string() + " is not an embedding file");
    }
    const auto version = get_le<std::uint32_t>(in);
    if (version != kEmbeddingFileVersion) {
        throw IoError("unsupported embedding file version " + std::to_string(version));
    }
    EmbeddingSet set;
    set.dim = get_le<std::uint32_t>(in);
    set.parts = get_le<std::uint32_t>(in);
    const auto count = get_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord r;
        r.image_id.resize(get_le<std::uint32_t>(in));
        if (!in.read(r.image_id.data(), static_cast<std::streamsize>(r.image_id.size()))) {
            throw IoError("truncated embedding file");
        }
        r.identity = get_i64(in);
        r.camera = get_i64(in);
        const auto occ = get_le<std::uint8_t>(in);
        if (occ > static_cast<std::uint8_t>(Occlusion::Unlabeled)) {
            throw IoError("bad occlusion code in embedding file");
        }
        r.occlusion = static_cast<Occlusion>(occ);
        r.global.resize(set.dim);
        r.parts.resize(set.dim * set.parts);
        r.visibility.resize(set.parts);
        for (double& v : r.global) v = get_f64(in);
        for (double& v : r.parts) v = get_f64(in);
        for (double& v : r.visibility) v = get_f64(in);
        set.records.push_back(std::move(r));
    }
    return set;
}

}  // namespace tsd
