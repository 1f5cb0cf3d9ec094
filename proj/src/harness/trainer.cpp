#include "tsd/harness/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tsd/bench/benchmark.hpp"
#include "tsd/numeric/checkpoint.hpp"
#include "tsd/numeric/errors.hpp"
#include "tsd/numeric/optim.hpp"

namespace tsd {

std::vector<std::vector<std::size_t>> pk_batches(std::span<const std::int64_t> ids,
                                                 std::size_t ids_per_batch,
                                                 std::size_t images_per_id, Rng& rng) {
    std::map<std::int64_t, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]].push_back(i);

    // Per identity, a shuffled list of K-image chunks; leftovers are dropped.
    std::vector<std::int64_t> order;
    std::map<std::int64_t, std::vector<std::vector<std::size_t>>> chunks;
    for (auto& [id, members] : by_id) {
        if (members.size() < images_per_id) continue;
        shuffle(members, rng);
        auto& c = chunks[id];
        for (std::size_t k = 0; k + images_per_id <= members.size(); k += images_per_id) {
            c.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(k),
                           members.begin() + static_cast<std::ptrdiff_t>(k + images_per_id));
        }
        order.push_back(id);
    }
    if (order.size() < 2) {
        throw ContractError("need at least two identities with " + std::to_string(images_per_id) +
                            " images each");
    }
    const std::size_t p = std::min(ids_per_batch, order.size());

    std::vector<std::vector<std::size_t>> batches;
    for (;;) {
        std::vector<std::int64_t> open;
        for (std::int64_t id : order) {
            if (!chunks[id].empty()) open.push_back(id);
        }
        if (open.size() < p) break;
        shuffle(open, rng);
        std::vector<std::size_t> batch;
        for (std::size_t j = 0; j < p; ++j) {
            auto& c = chunks[open[j]];
            batch.insert(batch.end(), c.back().begin(), c.back().end());
            c.pop_back();
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

double StepLog::term(const std::string& name) const {
    for (const auto& [n, v] : terms) {
        if (n == name) return v;
    }
    return 0.0;
}

std::string StepLog::json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["total"] = total;
    nlohmann::ordered_json t = nlohmann::ordered_json::object();
    for (const auto& [n, v] : terms) t[n] = v;
    j["terms"] = std::move(t);
    return j.dump();
}

TsdModel make_model(const RunConfig& cfg) {
    Rng rng(cfg.train.seed);
    return TsdModel(cfg.model, rng);
}

TsdModel load_model(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
    TsdModel model = make_model(cfg);
    assign_tensors(model.state(), load_tensors(checkpoint));
    return model;
}

Batch make_batch(const SyntheticDataset& data, std::span<const std::size_t> indices,
                 std::span<const std::int64_t> classes) {
    if (indices.empty()) throw ContractError("empty batch");
    const Shape img = data.scenes[indices[0]].image.shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), img.begin(), img.end());
    std::vector<double> pixels;
    pixels.reserve(shape_numel(shape));
    Batch b;
    for (std::size_t i : indices) {
        const SyntheticScene& s = data.scenes.at(i);
        if (s.image.shape() != img) throw DimensionError("scenes differ in image size");
        const auto v = s.image.values();
        pixels.insert(pixels.end(), v.begin(), v.end());
        if (classes.empty()) {
            b.labels.push_back(0);
        } else {
            const auto it = std::ranges::lower_bound(classes, s.identity);
            if (it == classes.end() || *it != s.identity) {
                throw ContractError("identity " + std::to_string(s.identity) + " has no class");
            }
            b.labels.push_back(static_cast<std::size_t>(it - classes.begin()));
        }
        b.ids.push_back(s.identity);
        b.parts.push_back(s.labels);
    }
    b.images = Tensor(std::move(shape), std::move(pixels));
    return b;
}

namespace {

// Teacher attention must vanish on every patch outside a non-empty mask row.
std::size_t check_leakage(const StepOutput& out) {
    if (out.teacher_masks.empty()) return 0;
    const Tensor& a = out.teacher_attention;
    const std::size_t b = a.dim(0), p = a.dim(1), n = a.dim(2);
    const auto v = a.values();
    std::size_t rows = 0;
    for (std::size_t s = 0; s < b; ++s) {
        const PartMask& m = out.teacher_masks[s];
        for (std::size_t k = 0; k < p; ++k) {
            if (m.row_empty(k)) continue;
            ++rows;
            for (std::size_t i = 0; i < n; ++i) {
                if (!m.at(k, i) && v[(s * p + k) * n + i] != 0.0) {
                    throw NumericError("teacher attention leaks outside part " + std::to_string(k) +
                                       " of batch item " + std::to_string(s));
                }
            }
        }
    }
    return rows;
}

}  // namespace

TrainResult train_model(TsdModel& model, const RunConfig& cfg, const SyntheticDataset& data,
                        const TrainOptions& options) {
    std::vector<std::size_t> train_idx;
    std::vector<std::int64_t> train_ids;
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
        if (data.scenes[i].split != Split::Train) continue;
        train_idx.push_back(i);
        train_ids.push_back(data.scenes[i].identity);
    }
    std::vector<std::int64_t> classes = train_ids;
    std::ranges::sort(classes);
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() > model.config().num_classes) {
        throw ContractError(std::to_string(classes.size()) + " training identities but the model has " +
                            std::to_string(model.config().num_classes) + " classes");
    }

    std::ofstream log_file;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        save_config(options.out_dir / "config.toml", cfg);
        log_file.open(options.out_dir / "log.jsonl");
        if (!log_file) throw IoError("cannot write " + (options.out_dir / "log.jsonl").string());
    }

    Rng sampler(cfg.train.seed * 0x9e3779b97f4a7c15ULL + 1);
    Sgd opt(model.trainable(), cfg.train.sgd);
    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const double lr = cosine_lr(cfg.train.sgd.lr, static_cast<double>(epoch),
                                    static_cast<double>(cfg.train.epochs));
        const auto batches = pk_batches(train_ids, cfg.train.ids_per_batch,
                                        cfg.train.images_per_id, sampler);
        for (const auto& local : batches) {
            std::vector<std::size_t> idx;
            for (std::size_t j : local) idx.push_back(train_idx[j]);
            const Batch batch = make_batch(data, idx, classes);

            opt.zero_grad();
            StepOutput out = model.forward_train(batch, epoch);
            out.losses.total.backward();
            opt.step(lr);
            if (cfg.train.check_leakage) result.leakage_checks += check_leakage(out);

            StepLog rec{step, epoch, lr, {}, out.losses.total.item()};
            for (const LossTerm& t : out.losses.terms) {
                const double v = t.value.item();
                if (!std::isfinite(v)) throw NumericError("loss term " + t.name + " is not finite");
                rec.terms.emplace_back(t.name, v);
            }
            if (log_file.is_open()) log_file << rec.json() << '\n';
            result.log.push_back(std::move(rec));
            ++step;
            if (options.max_steps && step >= options.max_steps) break;
        }
        if (!options.out_dir.empty()) {
            save_tensors(options.out_dir / "checkpoint.bin", model.state().entries());
        }
        if (options.progress && !result.log.empty()) {
            *options.progress << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " lr " << lr
                              << " loss " << result.log.back().total << '\n';
        }
        if (options.max_steps && step >= options.max_steps) break;
    }
    return result;
}

EmbeddingSet embed_dataset(TsdModel& model, const SyntheticDataset& data, std::size_t batch_size) {
    EmbeddingSet set;
    set.dim = model.config().encoder.dim;
    set.parts = model.has_decoder() ? model.config().decoder.parts : 0;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
        if (data.scenes[i].split != Split::Train) idx.push_back(i);
    }
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t end = std::min(idx.size(), start + batch_size);
        const std::span<const std::size_t> chunk(idx.data() + start, end - start);
        const Batch b = make_batch(data, chunk, {});
        std::vector<EmbeddingRecord> recs = model.embed(b.images);
        for (std::size_t j = 0; j < chunk.size(); ++j) {
            const SyntheticScene& s = data.scenes[chunk[j]];
            recs[j].image_id = s.image_id;
            recs[j].identity = s.identity;
            recs[j].camera = s.camera;
            recs[j].occlusion = s.occlusion;
            set.records.push_back(std::move(recs[j]));
        }
    }
    set.check();
    return set;
}

EvalSplit test_split(const SyntheticDataset& data, std::uint64_t seed) {
    Manifest test;
    for (const ManifestRecord& r : data.manifest()) {
        if (r.split != Split::Train) test.push_back(r);
    }
    BenchmarkSplit b = build_benchmark(test, seed);
    return {std::move(b.query), std::move(b.gallery)};
}

MetricReport evaluate_model(TsdModel& model, const SyntheticDataset& data, std::uint64_t seed) {
    const EmbeddingSet set = embed_dataset(model, data);
    const EvalSplit split = test_split(data, seed);
    return evaluate_embeddings(set, split.query, split.gallery);
}

namespace {

template <class F>
double mean_over(const std::vector<AblationRun>& runs, Variant v, F get) {
    double s = 0;
    std::size_t n = 0;
    for (const AblationRun& r : runs) {
        if (r.variant != v) continue;
        s += get(r);
        ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

double AblationTable::mean_map(Variant v, Family f) const {
    return mean_over(runs, v, [f](const AblationRun& r) { return r.metrics.family(f).map; });
}

double AblationTable::mean_rank1(Variant v, Family f) const {
    return mean_over(runs, v, [f](const AblationRun& r) { return r.metrics.family(f).rank1; });
}

std::vector<Variant> AblationTable::variants() const {
    std::vector<Variant> out;
    for (const AblationRun& r : runs) {
        if (std::ranges::find(out, r.variant) == out.end()) out.push_back(r.variant);
    }
    return out;
}

std::string AblationTable::json() const {
    nlohmann::ordered_json j;
    j["runs"] = nlohmann::ordered_json::array();
    for (const AblationRun& r : runs) {
        nlohmann::ordered_json e;
        e["variant"] = std::string(to_string(r.variant));
        e["seed"] = r.seed;
        e["metrics"] = nlohmann::ordered_json::parse(metric_report_json(r.metrics, -1));
        e["first_loss"] = r.first_total;
        e["last_loss"] = r.last_total;
        j["runs"].push_back(std::move(e));
    }
    nlohmann::ordered_json mean;
    for (Variant v : variants()) {
        nlohmann::ordered_json row;
        for (Family f : {Family::All, Family::Occ, Family::NPO, Family::NTP}) {
            row[std::string(to_string(f))] = {{"rank1", mean_rank1(v, f)}, {"mAP", mean_map(v, f)}};
        }
        mean[std::string(to_string(v))] = std::move(row);
    }
    j["mean"] = std::move(mean);
    return j.dump(2);
}

std::string AblationTable::text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << std::left << std::setw(10) << "variant";
    for (const char* h : {"all R1", "all mAP", "occ R1", "occ mAP", "npo mAP", "ntp mAP"}) {
        os << std::right << std::setw(9) << h;
    }
    os << '\n';
    for (Variant v : variants()) {
        os << std::left << std::setw(10) << to_string(v) << std::right;
        os << std::setw(9) << 100 * mean_rank1(v, Family::All) << std::setw(9)
           << 100 * mean_map(v, Family::All) << std::setw(9) << 100 * mean_rank1(v, Family::Occ)
           << std::setw(9) << 100 * mean_map(v, Family::Occ) << std::setw(9)
           << 100 * mean_map(v, Family::NPO) << std::setw(9) << 100 * mean_map(v, Family::NTP) << '\n';
    }
    return os.str();
}

AblationTable run_ablation(const RunConfig& base, std::span<const Variant> variants,
                           std::span<const std::uint64_t> seeds, std::ostream* progress) {
    AblationTable table;
    for (std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        const SyntheticDataset data = generate_dataset(cfg.data);
        for (Variant v : variants) {
            cfg.model.variant = v;
            const auto t0 = std::chrono::steady_clock::now();
            TsdModel model = make_model(cfg);
            const TrainResult tr = train_model(model, cfg, data);
            AblationRun run;
            run.variant = v;
            run.seed = seed;
            run.metrics = evaluate_model(model, data, seed);
            run.first_total = tr.log.front().total;
            run.last_total = tr.log.back().total;
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (progress) {
                *progress << to_string(v) << " seed " << seed << ": occ mAP "
                          << run.metrics.occ.map << " all mAP " << run.metrics.all.map << " ("
                          << run.seconds << " s)" << std::endl;
            }
            table.runs.push_back(std::move(run));
        }
    }
    return table;
}

}  // namespace tsd
