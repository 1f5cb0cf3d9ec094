#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsd/eval/embeddings.hpp"
#include "tsd/eval/metrics.hpp"
#include "tsd/harness/config.hpp"
#include "tsd/harness/model.hpp"
#include "tsd/harness/synth.hpp"

namespace tsd {

/// Identity-balanced batches: `ids_per_batch` identities × `images_per_id`
/// images each, drawn without replacement within an epoch. `ids` holds the
/// identity of every candidate image; the result holds indices into it.
std::vector<std::vector<std::size_t>> pk_batches(std::span<const std::int64_t> ids,
                                                 std::size_t ids_per_batch,
                                                 std::size_t images_per_id, Rng& rng);

struct StepLog {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    std::vector<std::pair<std::string, double>> terms;
    double total = 0.0;

    double term(const std::string& name) const;
    std::string json() const;
};

struct TrainOptions {
    /// Where log.jsonl, config.toml and checkpoint.bin go. Empty: nowhere.
    std::filesystem::path out_dir;
    /// Stop after this many steps (0 = run every epoch).
    std::size_t max_steps = 0;
    std::ostream* progress = nullptr;
};

struct TrainResult {
    std::vector<StepLog> log;
    std::size_t leakage_checks = 0;  // masked rows verified
};

/// Builds a model from `cfg` and the run seed.
TsdModel make_model(const RunConfig& cfg);
/// Model with weights from a checkpoint written by train_model.
TsdModel load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint);

/// Trains on the Train split. Throws ContractError when fewer than two
/// identities have `images_per_id` images.
TrainResult train_model(TsdModel& model, const RunConfig& cfg, const SyntheticDataset& data,
                        const TrainOptions& options = {});

/// Batch of the given scenes with class labels from `classes` (sorted ids);
/// with no classes every label is 0.
Batch make_batch(const SyntheticDataset& data, std::span<const std::size_t> indices,
                 std::span<const std::int64_t> classes);

/// Embeddings of every non-training scene.
EmbeddingSet embed_dataset(TsdModel& model, const SyntheticDataset& data,
                           std::size_t batch_size = 64);

struct EvalSplit {
    Manifest query;
    Manifest gallery;
};

/// Benchmark protocol on the test scenes: everything merged into the
/// gallery, holistic queries sampled per identity.
EvalSplit test_split(const SyntheticDataset& data, std::uint64_t seed);

MetricReport evaluate_model(TsdModel& model, const SyntheticDataset& data, std::uint64_t seed);

struct AblationRun {
    Variant variant = Variant::M1;
    std::uint64_t seed = 0;
    MetricReport metrics;
    double first_total = 0.0;
    double last_total = 0.0;
    double seconds = 0.0;
};

struct AblationTable {
    std::vector<AblationRun> runs;

    /// Mean of one family's mAP (or rank-1) over the seeds of a variant.
    double mean_map(Variant v, Family f = Family::Occ) const;
    double mean_rank1(Variant v, Family f = Family::Occ) const;
    std::vector<Variant> variants() const;
    std::string json() const;
    std::string text() const;
};

/// Trains and evaluates every variant for every seed. Seed s drives the
/// synthetic data, initialization and sampling of all variants alike.
AblationTable run_ablation(const RunConfig& base, std::span<const Variant> variants,
                           std::span<const std::uint64_t> seeds, std::ostream* progress = nullptr);

}  // namespace tsd
