#include "tsd/bench/benchmark.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/random.hpp"

namespace tsd {

BenchmarkSplit build_benchmark(const Manifest& manifest, std::uint64_t seed,
                               std::size_t per_identity) {
    check_unique_ids(manifest);
    BenchmarkSplit out;
    out.seed = seed;
    out.input_hash = manifest_hash(manifest);

    std::set<std::int64_t> query_ids;
    for (const ManifestRecord& r : manifest) {
        if (r.split == Split::Train) out.train.push_back(r);
        if (r.split == Split::Query) query_ids.insert(r.identity);
    }
    for (Split s : {Split::Query, Split::Gallery}) {
        for (const ManifestRecord& r : manifest) {
            if (r.split != s) continue;
            ManifestRecord g = r;
            g.split = Split::Gallery;
            out.gallery.push_back(std::move(g));
        }
    }

    std::map<std::int64_t, std::vector<std::size_t>> candidates;
    for (std::size_t i = 0; i < out.gallery.size(); ++i) {
        const ManifestRecord& r = out.gallery[i];
        if (!query_ids.contains(r.identity)) continue;
        if (r.occlusion == Occlusion::Unlabeled) {
            throw ValidationError("image " + r.image_id + " of query identity " +
                                  std::to_string(r.identity) + " has no occlusion label");
        }
        if (r.occlusion == Occlusion::Holistic) candidates[r.identity].push_back(i);
    }

    Rng rng(seed);
    std::vector<std::size_t> chosen;
    for (std::int64_t id : query_ids) {
        auto it = candidates.find(id);
        if (it == candidates.end()) continue;
        std::vector<std::size_t> pool = it->second;
        shuffle(pool, rng);
        pool.resize(std::min(pool.size(), per_identity));
        chosen.insert(chosen.end(), pool.begin(), pool.end());
    }
    std::ranges::sort(chosen);
    for (std::size_t i : chosen) {
        ManifestRecord q = out.gallery[i];
        q.split = Split::Query;
        out.query.push_back(std::move(q));
    }
    return out;
}

SplitReport validate_split(const BenchmarkSplit& split, std::size_t per_identity) {
    SplitReport rep;
    std::set<std::int64_t> gallery_ids;
    std::unordered_set<std::string> gallery_images;
    for (const ManifestRecord& g : split.gallery) {
        gallery_ids.insert(g.identity);
        ++rep.gallery_occlusion[std::string(to_string(g.occlusion))];
        if (!gallery_images.insert(g.image_id).second) {
            rep.violations.push_back("gallery image " + g.image_id + " listed twice");
        }
    }
    rep.gallery_identities = gallery_ids.size();
    std::unordered_set<std::string> seen;
    for (const ManifestRecord& q : split.query) {
        ++rep.queries_per_identity[q.identity];
        ++rep.query_occlusion[std::string(to_string(q.occlusion))];
        if (!seen.insert(q.image_id).second) {
            rep.violations.push_back("query image " + q.image_id + " listed twice");
        }
        if (q.occlusion != Occlusion::Holistic) {
            rep.violations.push_back("query image " + q.image_id + " is " +
                                     std::string(to_string(q.occlusion)) + ", not holistic");
        }
        if (!gallery_ids.contains(q.identity)) {
            rep.violations.push_back("query identity " + std::to_string(q.identity) +
                                     " is absent from the gallery");
        }
    }
    for (const auto& [id, n] : rep.queries_per_identity) {
        if (n > per_identity) {
            rep.violations.push_back("identity " + std::to_string(id) + " has " +
                                     std::to_string(n) + " queries");
        }
    }
    return rep;
}

std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string manifest_hash(const Manifest& manifest) {
    std::ostringstream csv;
    write_manifest(csv, manifest);
    return sha256_hex(csv.str());
}

void write_split(const std::filesystem::path& dir, const BenchmarkSplit& split) {
    std::filesystem::create_directories(dir);
    save_manifest(dir / "train.csv", split.train);
    save_manifest(dir / "gallery.csv", split.gallery);
    save_manifest(dir / "query.csv", split.query);
    SplitReport rep = validate_split(split);
    nlohmann::ordered_json prov;
    prov["seed"] = split.seed;
    prov["input_sha256"] = split.input_hash;
    prov["train_images"] = split.train.size();
    prov["gallery_images"] = split.gallery.size();
    prov["gallery_identities"] = rep.gallery_identities;
    prov["query_images"] = split.query.size();
    prov["query_identities"] = rep.queries_per_identity.size();
    prov["violations"] = rep.violations;
    std::ofstream out(dir / "provenance.json");
    if (!out) throw IoError("cannot write " + (dir / "provenance.json").string());
    out << prov.dump(2) << '\n';
}

}  // namespace tsd
