#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tsd/harness/model.hpp"
#include "tsd/harness/synth.hpp"
#include "tsd/numeric/optim.hpp"

namespace tsd {

struct TrainConfig {
    std::size_t epochs = 120;
    std::size_t ids_per_batch = 16;
    std::size_t images_per_id = 4;
    SgdConfig sgd;
    std::uint64_t seed = 1;
    /// Verify teacher attention outside the masks is zero at every step.
    bool check_leakage = false;
};

struct RunConfig {
    SynthConfig data;
    ModelConfig model;
    TrainConfig train;

    /// Full-size defaults (256×128 images, 120 epochs, 16×4 batches).
    static RunConfig full();
    /// Desk-scale profile: 32×16 images, patch 4, D 32, depth 2.
    static RunConfig toy();

    /// Copies shared sizes (image, patch, parts, classes) from the data
    /// section into the model section and validates everything.
    void sync();
};

/// Every field as `section.key`, in file order.
std::vector<std::string> config_keys();
std::string config_value(const RunConfig& cfg, std::string_view key);
/// Throws ValidationError on unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// `[section]` headers, `key = value` lines, `#` comments. Strings may be
/// quoted.
RunConfig parse_config(std::string_view text, RunConfig base = RunConfig::toy());
std::string format_config(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path, RunConfig base = RunConfig::toy());
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace tsd
