#include "tsd/data/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "tsd/numeric/errors.hpp"

namespace tsd {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::ranges::transform(out, out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::int64_t parse_int(std::string_view text, std::size_t line, const char* field) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ValidationError("manifest line " + std::to_string(line) + ": bad " + field + " '" +
                              std::string(text) + "'");
    }
    return v;
}

}  // namespace

std::string_view to_string(Occlusion o) {
    switch (o) {
        case Occlusion::Holistic: return "holistic";
        case Occlusion::NPO: return "npo";
        case Occlusion::NTP: return "ntp";
        case Occlusion::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Query: return "query";
        case Split::Gallery: return "gallery";
    }
    return "train";
}

Occlusion parse_occlusion(std::string_view text) {
    const std::string t = lower(trim(text));
    if (t == "holistic") return Occlusion::Holistic;
    if (t == "npo") return Occlusion::NPO;
    if (t == "ntp") return Occlusion::NTP;
    if (t == "unlabeled" || t.empty()) return Occlusion::Unlabeled;
    throw ValidationError("unknown occlusion label '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
    const std::string t = lower(trim(text));
    if (t == "train") return Split::Train;
    if (t == "query") return Split::Query;
    if (t == "gallery") return Split::Gallery;
    throw ValidationError("unknown split '" + std::string(text) + "'");
}

Manifest read_manifest(std::istream& in) {
    Manifest out;
    std::string line;
    std::size_t number = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++number;
        std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        if (!header) {
            if (lower(view) != kManifestHeader) {
                throw ValidationError("manifest header must be '" + std::string(kManifestHeader) +
                                      "'");
            }
            header = true;
            continue;
        }
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = view.find(',', start);
            fields.push_back(trim(view.substr(start, comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 5) {
            throw ValidationError("manifest line " + std::to_string(number) + ": expected 5 fields");
        }
        if (fields[0].empty()) {
            throw ValidationError("manifest line " + std::to_string(number) + ": empty image id");
        }
        ManifestRecord r;
        r.image_id = std::string(fields[0]);
        r.identity = parse_int(fields[1], number, "identity");
        r.camera = parse_int(fields[2], number, "camera");
        r.split = parse_split(fields[3]);
        r.occlusion = parse_occlusion(fields[4]);
        out.push_back(std::move(r));
    }
    if (!header) throw ValidationError("manifest is empty");
    check_unique_ids(out);
    return out;
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
    out << kManifestHeader << '\n';
    for (const ManifestRecord& r : manifest) {
        out << r.image_id << ',' << r.identity << ',' << r.camera << ',' << to_string(r.split)
            << ',' << to_string(r.occlusion) << '\n';
    }
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    return read_manifest(in);
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    write_manifest(out, manifest);
    if (!out) throw IoError("failed writing manifest " + path.string());
}

void check_unique_ids(const Manifest& manifest) {
    std::unordered_set<std::string> seen;
    for (const ManifestRecord& r : manifest) {
        if (!seen.insert(r.image_id).second) {
            throw ValidationError("duplicate image id " + r.image_id);
        }
    }
}

}  // namespace tsd
