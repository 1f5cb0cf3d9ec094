#pragma once

#include <string>

#include "tsd/data/manifest.hpp"

namespace tsd::testing {

// Annotation manifest with the published Occluded-Duke split sizes:
//   train    15,618 images / 702 identities
//   query     2,210 images / 519 identities (all occluded)
//   gallery  15,791 images / 1,110 identities
// Query identities own these holistic gallery images: two own none, 47 own
// exactly four, the remaining 470 own five to eight.
inline Manifest duke_mirror_manifest() {
    Manifest m;
    auto add = [&](const std::string& prefix, std::size_t n, std::int64_t id, Split s, Occlusion o) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::string image = prefix + std::to_string(id) + "_" + std::to_string(m.size());
            m.push_back({image, id, static_cast<std::int64_t>(m.size() % 8 + 1), s, o});
        }
    };

    constexpr std::size_t train_ids = 702, train_images = 15618;
    for (std::size_t i = 0; i < train_ids; ++i) {
        const std::size_t n = train_images / train_ids + (i < train_images % train_ids ? 1 : 0);
        add("t", n, 2000 + static_cast<std::int64_t>(i), Split::Train, Occlusion::Unlabeled);
    }

    constexpr std::size_t query_ids = 519, query_images = 2210;
    for (std::size_t i = 0; i < query_ids; ++i) {
        const std::size_t n = query_images / query_ids + (i < query_images % query_ids ? 1 : 0);
        add("q", n, static_cast<std::int64_t>(i), Split::Query,
            i % 2 ? Occlusion::NTP : Occlusion::NPO);
    }

    constexpr std::size_t gallery_ids = 1110, gallery_images = 15791;
    std::size_t used = 0;
    for (std::size_t i = 0; i < query_ids; ++i) {
        const std::size_t holistic = i < 2 ? 0 : i < 49 ? 4 : 5 + i % 4;
        add("g", holistic, static_cast<std::int64_t>(i), Split::Gallery, Occlusion::Holistic);
        add("g", 2, static_cast<std::int64_t>(i), Split::Gallery,
            i % 3 ? Occlusion::NPO : Occlusion::NTP);
        used += holistic + 2;
    }
    const std::size_t rest = gallery_images - used, distractors = gallery_ids - query_ids;
    for (std::size_t i = 0; i < distractors; ++i) {
        const std::size_t n = rest / distractors + (i < rest % distractors ? 1 : 0);
        add("g", n, static_cast<std::int64_t>(query_ids + i), Split::Gallery, Occlusion::Holistic);
    }
    return m;
}

}  // namespace tsd::testing
