// Command-line entry point: synthetic data, training, evaluation, benchmark
// splits, the ablation ladder, gradient checks and attention export.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tsd/bench/benchmark.hpp"
#include "tsd/eval/embeddings.hpp"
#include "tsd/eval/metrics.hpp"
#include "tsd/harness/attention_export.hpp"
#include "tsd/harness/config.hpp"
#include "tsd/harness/gradient_suite.hpp"
#include "tsd/harness/synth.hpp"
#include "tsd/harness/trainer.hpp"
#include "tsd/numeric/errors.hpp"

namespace fs = std::filesystem;
using namespace tsd;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3, kInvalid = 4, kNumeric = 5 };

struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;
    bool full = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "TOML-style run configuration");
        cmd->add_option("--set", sets, "Override one field, e.g. --set train.lr=0.01");
        cmd->add_flag("--full", full, "Start from full-size defaults instead of the toy profile");
    }

    RunConfig resolve() const {
        RunConfig base = full ? RunConfig::full() : RunConfig::toy();
        RunConfig cfg = file.empty() ? base : load_config(file, base);
        for (const std::string& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ValidationError("--set expects key=value, got " + s);
            set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
        }
        cfg.sync();
        return cfg;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

SyntheticDataset dataset_for(const RunConfig& cfg, const std::string& dir) {
    return dir.empty() ? generate_dataset(cfg.data) : load_dataset(dir);
}

void print_metrics(const MetricReport& r) { std::cout << metric_report_json(r) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Teacher-student part decoder for occluded person re-identification"};
    app.require_subcommand(1);

    // synth
    ConfigArgs synth_cfg;
    std::string synth_out;
    std::int64_t synth_seed = -1;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic occluded-pedestrian dataset");
    synth_cfg.attach(synth);
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--seed", synth_seed, "Data seed");

    // train
    ConfigArgs train_cfg;
    std::string train_data, train_out, train_variant;
    std::int64_t train_seed = -1;
    std::size_t train_epochs = 0;
    double train_lr = 0;
    bool train_leak = false;
    CLI::App* train = app.add_subcommand("train", "Train one variant, then embed and score the test split");
    train_cfg.attach(train);
    train->add_option("--data", train_data, "Dataset directory from `synth` (default: generate)");
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--variant", train_variant, "baseline, m1, m2, m3 or m4");
    train->add_option("--seed", train_seed, "Initialization and sampling seed");
    train->add_option("--epochs", train_epochs, "Epochs");
    train->add_option("--lr", train_lr, "Base learning rate");
    train->add_flag("--check-leakage", train_leak, "Assert zero teacher attention outside the masks");

    // eval
    std::string eval_emb, eval_query, eval_gallery, eval_manifest, eval_out;
    std::uint64_t eval_seed = 0;
    bool keep_same_camera = false, keep_self = false;
    CLI::App* eval = app.add_subcommand("eval", "Score an embedding file against query/gallery manifests");
    eval->add_option("--embeddings", eval_emb, "Embedding file")->required();
    auto* q_opt = eval->add_option("--query", eval_query, "Query manifest");
    auto* g_opt = eval->add_option("--gallery", eval_gallery, "Gallery manifest");
    auto* m_opt = eval->add_option("--manifest", eval_manifest,
                                   "Raw manifest; the benchmark split is built from it");
    q_opt->needs(g_opt);
    g_opt->needs(q_opt);
    m_opt->excludes(q_opt)->excludes(g_opt);
    eval->add_option("--seed", eval_seed, "Query sampling seed for --manifest");
    eval->add_flag("--keep-same-camera", keep_same_camera, "Do not drop same-identity same-camera matches");
    eval->add_flag("--keep-self", keep_self, "Do not drop a query's own image from its gallery");
    eval->add_option("--out", eval_out, "Write the JSON report here instead of stdout");

    // build-benchmark
    std::string bench_manifest, bench_out;
    std::uint64_t bench_seed = 0;
    std::size_t bench_per_id = kQueriesPerIdentity;
    CLI::App* bench = app.add_subcommand("build-benchmark", "Build the occluded benchmark split from a manifest");
    bench->add_option("--manifest", bench_manifest, "Input manifest")->required();
    bench->add_option("--out", bench_out, "Output directory")->required();
    bench->add_option("--seed", bench_seed, "Sampling seed");
    bench->add_option("--per-identity", bench_per_id, "Holistic queries per identity");

    // ablate
    ConfigArgs ablate_cfg;
    std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
    std::vector<std::string> ablate_variants{"baseline", "m1", "m2", "m3", "m4"};
    std::string ablate_out;
    CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate the ablation ladder over seeds");
    ablate_cfg.attach(ablate);
    ablate->add_option("--seeds", ablate_seeds, "Seeds")->delimiter(',');
    ablate->add_option("--variants", ablate_variants, "Variants")->delimiter(',');
    ablate->add_option("--out", ablate_out, "Write ablation.json and ablation.txt here");

    // gradcheck
    std::uint64_t grad_seed = 2024;
    bool grad_quiet = false;
    CLI::App* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    grad->add_option("--seed", grad_seed, "Seed for random inputs");
    grad->add_flag("--quiet", grad_quiet, "Only print the summary");

    // export-attn
    std::string attn_run, attn_data, attn_out;
    std::vector<std::string> attn_images;
    std::size_t attn_zoom = 8;
    CLI::App* attn = app.add_subcommand("export-attn", "Write per-part attention maps of a trained run");
    attn->add_option("--run", attn_run, "Run directory from `train`")->required();
    attn->add_option("--data", attn_data, "Dataset directory (default: regenerate from the run config)");
    attn->add_option("--image", attn_images, "Image ids (default: the first test image of each kind)");
    attn->add_option("--out", attn_out, "Output directory")->required();
    attn->add_option("--zoom", attn_zoom, "Pixels per patch in the images")->check(CLI::Range(1, 64));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) {
            RunConfig cfg = synth_cfg.resolve();
            if (synth_seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(synth_seed);
            const SyntheticDataset data = generate_dataset(cfg.data);
            save_dataset(synth_out, data, cfg.data.grid_h(), cfg.data.grid_w());
            std::cout << "wrote " << data.scenes.size() << " scenes to " << synth_out << '\n';
            return kOk;
        }

        if (*train) {
            RunConfig cfg = train_cfg.resolve();
            if (!train_variant.empty()) cfg.model.variant = parse_variant(train_variant);
            if (train_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(train_seed);
            if (train_epochs) cfg.train.epochs = train_epochs;
            if (train_lr > 0) cfg.train.sgd.lr = train_lr;
            if (train_leak) cfg.train.check_leakage = true;
            cfg.sync();
            const SyntheticDataset data = dataset_for(cfg, train_data);
            TsdModel model = make_model(cfg);
            TrainOptions opts;
            opts.out_dir = train_out;
            opts.progress = &std::cout;
            const TrainResult result = train_model(model, cfg, data, opts);
            if (cfg.train.check_leakage) {
                std::cout << "leakage check: " << result.leakage_checks << " masked rows, none leaked\n";
            }

            const EmbeddingSet set = embed_dataset(model, data);
            save_embeddings(fs::path(train_out) / "embeddings.bin", set);
            const EvalSplit split = test_split(data, cfg.data.seed);
            save_manifest(fs::path(train_out) / "query.csv", split.query);
            save_manifest(fs::path(train_out) / "gallery.csv", split.gallery);
            const MetricReport report = evaluate_embeddings(set, split.query, split.gallery);
            write_text(fs::path(train_out) / "metrics.json", metric_report_json(report) + "\n");
            print_metrics(report);
            return kOk;
        }

        if (*eval) {
            const EmbeddingSet set = load_embeddings(eval_emb);
            Manifest query, gallery;
            if (!eval_manifest.empty()) {
                BenchmarkSplit split = build_benchmark(load_manifest(eval_manifest), eval_seed);
                query = std::move(split.query);
                gallery = std::move(split.gallery);
            } else if (!eval_query.empty()) {
                query = load_manifest(eval_query);
                gallery = load_manifest(eval_gallery);
            } else {
                std::cerr << "eval: give --query and --gallery, or --manifest\n";
                return kUsage;
            }
            RunOptions opts;
            opts.exclude_same_camera = !keep_same_camera;
            opts.exclude_self = !keep_self;
            const std::string json = metric_report_json(evaluate_embeddings(set, query, gallery, opts));
            if (eval_out.empty()) {
                std::cout << json << '\n';
            } else {
                write_text(eval_out, json + "\n");
            }
            return kOk;
        }

        if (*bench) {
            const BenchmarkSplit split = build_benchmark(load_manifest(bench_manifest), bench_seed, bench_per_id);
            const SplitReport rep = validate_split(split, bench_per_id);
            write_split(bench_out, split);
            std::cout << "gallery " << split.gallery.size() << " images, " << rep.gallery_identities
                      << " identities; query " << split.query.size() << " images, "
                      << rep.queries_per_identity.size() << " identities\n";
            for (const std::string& v : rep.violations) std::cerr << "violation: " << v << '\n';
            return rep.ok() ? kOk : kInvalid;
        }

        if (*ablate) {
            const RunConfig cfg = ablate_cfg.resolve();
            std::vector<Variant> variants;
            for (const std::string& v : ablate_variants) variants.push_back(parse_variant(v));
            const AblationTable table = run_ablation(cfg, variants, ablate_seeds, &std::cout);
            std::cout << '\n' << table.text();
            if (!ablate_out.empty()) {
                fs::create_directories(ablate_out);
                write_text(fs::path(ablate_out) / "ablation.json", table.json() + "\n");
                write_text(fs::path(ablate_out) / "ablation.txt", table.text());
                save_config(fs::path(ablate_out) / "config.toml", cfg);
            }
            return kOk;
        }

        if (*grad) {
            const GradientSuiteResult r = run_gradient_suite(grad_seed, [&](const GradientCase& c) {
                if (grad_quiet && c.passed()) return;
                std::cout << (c.passed() ? "ok   " : "FAIL ") << c.report.name
                          << "  max rel err " << c.report.max_relative_error;
                if (c.key_bias_grad > 0) std::cout << "  key-bias grad " << c.key_bias_grad;
                std::cout << '\n';
            });
            std::cout << r.cases.size() << " checks, max relative error " << r.max_relative_error()
                      << ", " << r.seconds << " s: " << (r.passed() ? "PASS" : "FAIL") << '\n';
            return r.passed() ? kOk : kFailed;
        }

        if (*attn) {
            const fs::path run(attn_run);
            const RunConfig cfg = load_config(run / "config.toml");
            TsdModel model = load_model(cfg, run / "checkpoint.bin");
            const SyntheticDataset data = dataset_for(cfg, attn_data);
            std::vector<const SyntheticScene*> scenes;
            if (attn_images.empty()) {
                for (Occlusion kind : {Occlusion::Holistic, Occlusion::NPO, Occlusion::NTP}) {
                    for (const SyntheticScene& s : data.scenes) {
                        if (s.split != Split::Train && s.occlusion == kind) {
                            scenes.push_back(&s);
                            break;
                        }
                    }
                }
            } else {
                for (const std::string& id : attn_images) {
                    const SyntheticScene* s = data.find(id);
                    if (!s) throw ValidationError("no image " + id + " in the dataset");
                    scenes.push_back(s);
                }
            }
            for (const SyntheticScene* s : scenes) {
                const AttentionMaps maps =
                    scene_attention(model, *s, cfg.data.grid_h(), cfg.data.grid_w(), cfg.train.epochs);
                for (const fs::path& p : write_attention(attn_out, s->image_id, maps, attn_zoom)) {
                    std::cout << p.string() << '\n';
                }
            }
            return kOk;
        }
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kInvalid;
    } catch (const ContractError& e) {
        std::cerr << "contract violation: " << e.what() << '\n';
        return kInvalid;
    } catch (const DimensionError& e) {
        std::cerr << "dimension mismatch: " << e.what() << '\n';
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    }
    return kUsage;
}
