#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tsd {

enum class Occlusion : std::uint8_t { Holistic = 0, NPO = 1, NTP = 2, Unlabeled = 3 };

enum class Split : std::uint8_t { Train = 0, Query = 1, Gallery = 2 };

std::string_view to_string(Occlusion o);
std::string_view to_string(Split s);
/// Case-insensitive; throws ValidationError on unknown names.
Occlusion parse_occlusion(std::string_view text);
Split parse_split(std::string_view text);

inline bool is_occluded(Occlusion o) { return o == Occlusion::NPO || o == Occlusion::NTP; }

struct ManifestRecord {
    std::string image_id;
    std::int64_t identity = 0;
    std::int64_t camera = 0;
    Split split = Split::Train;
    Occlusion occlusion = Occlusion::Unlabeled;

    friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

using Manifest = std::vector<ManifestRecord>;

// CSV with the header `image_id,identity,camera,split,occlusion`. Blank lines
// and lines starting with '#' are skipped.
inline constexpr std::string_view kManifestHeader = "image_id,identity,camera,split,occlusion";

Manifest read_manifest(std::istream& in);
void write_manifest(std::ostream& out, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Throws ValidationError on duplicate image ids.
void check_unique_ids(const Manifest& manifest);

}  // namespace tsd
