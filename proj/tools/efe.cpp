// Command-line driver: gen-data, train, eval, ablation, cross-camera,
// gradcheck, report. Configuration precedence is flags > --config file >
// built-in defaults; every run writes its resolved config.json beside its
// outputs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "efe/config.hpp"
#include "efe/eval.hpp"
#include "efe/experiments.hpp"
#include "efe/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace efe;

namespace {

// Raised for inputs that do not exist; exits with code 3.
struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingInput("input not found: " + path);
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

// Flags shared by every subcommand. Unset optionals leave the config value
// alone.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON config file (overrides defaults)");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--threads", threads, "worker threads for evaluation");
        app->add_option("--out", out, "output directory (default: $EFE_RUN_DIR or runs/, named time_hash)");
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config.empty()) {
            require_file(config);
            cfg = load_config(config);
        }
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        return cfg;
    }

    fs::path out_dir(const RunConfig& cfg) const {
        const fs::path dir = out.empty() ? default_run_dir(cfg) : fs::path(out);
        fs::create_directories(dir);
        return dir;
    }
};

// Training flags shared by train, ablation and cross-camera.
struct TrainFlags {
    std::optional<std::size_t> epochs, batch_size, warmup_epochs, warmup_steps;
    std::optional<double> lr;

    void attach(CLI::App* app) {
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--batch-size", batch_size, "mini-batch size");
        app->add_option("--lr", lr, "initial learning rate");
        app->add_option("--warmup-epochs", warmup_epochs, "epochs before the PoG term is enabled");
        app->add_option("--warmup-steps", warmup_steps, "steps before the PoG term is enabled (overrides epochs)");
    }

    void apply(RunConfig& cfg) const {
        if (epochs) cfg.train.epochs = *epochs;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (lr) cfg.train.lr = *lr;
        if (warmup_epochs) cfg.train.warmup_epochs_pog = *warmup_epochs;
        if (warmup_steps) cfg.train.warmup_steps_pog = *warmup_steps;
    }
};

Dataset load_dataset(const std::string& path) {
    require_file(path);
    return read_dataset(path);
}

void write_eval(const EvalReport& rep, const fs::path& dir) {
    write_report_json(rep, dir / "report.json");
    write_samples_csv(rep, dir / "samples.csv");
}

void print_report(const EvalReport& rep) {
    auto show = [](const char* label, const std::optional<double>& v, const char* unit) {
        if (v) {
            std::printf("  %-10s %10.3f %s\n", label, *v, unit);
        } else {
            std::printf("  %-10s %10s\n", label, "-");
        }
    };
    std::printf("%s on %s: %zu samples, %zu failures\n", rep.model_id.c_str(), rep.dataset_id.c_str(), rep.count,
                rep.failures);
    show("origin", rep.origin_mm, "mm");
    show("direction", rep.direction_deg, "deg");
    show("PoG", rep.pog_px, "px");
    show("PoG", rep.pog_mm, "mm");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EFE: frame-to-gaze estimation on synthetic desk scenes", "efe"};
    app.require_subcommand(1);

    // gen-data
    Common gen_common;
    std::optional<std::size_t> gen_n;
    std::optional<std::string> gen_camera;
    auto* gen = app.add_subcommand("gen-data", "render a labeled synthetic dataset");
    gen_common.attach(gen);
    gen->add_option("--n", gen_n, "number of samples");
    gen->add_option("--camera", gen_camera, "rig camera: MVC, W_C, W_L or W_R");

    // train
    Common train_common;
    TrainFlags train_flags;
    std::string train_data, train_split = "train";
    std::optional<std::string> train_variant_name;
    auto* train_cmd = app.add_subcommand("train", "train one model variant");
    train_common.attach(train_cmd);
    train_flags.attach(train_cmd);
    train_cmd->add_option("--data", train_data, "dataset file from gen-data")->required();
    train_cmd->add_option("--split", train_split, "split to train on: train, val, test or all");
    train_cmd->add_option("--variant", train_variant_name,
                          "efe, direct-regression, separate-models, joint-prediction or efe-no-depthmap");

    // eval
    Common eval_common;
    std::string eval_run, eval_data, eval_split = "test";
    bool eval_clamp = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained run on a dataset");
    eval_common.attach(eval_cmd);
    eval_cmd->add_option("--run", eval_run, "training run directory (config.json + model.ckpt)")->required();
    eval_cmd->add_option("--data", eval_data, "dataset file")->required();
    eval_cmd->add_option("--split", eval_split, "split to evaluate: train, val, test or all");
    eval_cmd->add_flag("--clamp-pog", eval_clamp, "clamp predicted PoG to the screen before scoring");

    // ablation
    Common abl_common;
    TrainFlags abl_flags;
    std::string abl_data, abl_from;
    auto* abl = app.add_subcommand("ablation", "train and compare all five variants");
    abl_common.attach(abl);
    abl_flags.attach(abl);
    abl->add_option("--data", abl_data, "dataset file; train and test splits are used")->required();
    abl->add_option("--from", abl_from, "reuse <dir>/<variant>/ runs instead of training");

    // cross-camera
    Common cc_common;
    TrainFlags cc_flags;
    std::optional<std::size_t> cc_n;
    std::vector<std::string> cc_variants{"efe", "direct-regression"};
    auto* cc = app.add_subcommand("cross-camera", "train per camera and test on the others");
    cc_common.attach(cc);
    cc_flags.attach(cc);
    cc->add_option("--n", cc_n, "scenes rendered per camera");
    cc->add_option("--variants", cc_variants, "variants to compare")->delimiter(',');

    // gradcheck
    Common gc_common;
    GradcheckOptions gc_opts;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and the EFE loss");
    gc_common.attach(gc);
    gc->add_option("--eps", gc_opts.eps, "central-difference step");
    gc->add_option("--tol", gc_opts.tolerance, "maximum relative error");

    // report
    Common rep_common;
    std::string rep_run, rep_data, rep_split = "test";
    auto* rep_cmd = app.add_subcommand("report", "residual histogram and depth/heatmap image dumps");
    rep_common.attach(rep_cmd);
    rep_cmd->add_option("--run", rep_run, "training run directory")->required();
    rep_cmd->add_option("--data", rep_data, "dataset file")->required();
    rep_cmd->add_option("--split", rep_split, "split to report on");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* sub = nullptr;
        for (const auto* s : app.get_subcommands()) sub = s;
        std::cerr << (sub ? sub->help() : app.help());
        return 2;
    }

    try {
        if (*gen) {
            RunConfig cfg = gen_common.resolve();
            if (gen_n) cfg.data.n = *gen_n;
            if (gen_camera) cfg.camera_id = *gen_camera;
            cfg.validate();
            const fs::path dir = gen_common.out_dir(cfg);
            const Dataset ds = generate_for(cfg);
            write_dataset(ds, dir / "dataset.efeds");
            write_config(cfg, dir / "config.json");
            const std::string sum = file_checksum(dir / "dataset.efeds");
            std::ofstream(dir / "checksum.txt", std::ios::binary) << sum << "  dataset.efeds\n";
            std::printf("%s\n%s  %zu samples\n", (dir / "dataset.efeds").string().c_str(), sum.c_str(), ds.size());
        } else if (*train_cmd) {
            RunConfig cfg = train_common.resolve();
            train_flags.apply(cfg);
            if (train_variant_name) cfg.variant = *train_variant_name;
            const Variant variant = parse_variant(cfg.variant);
            const Dataset all = load_dataset(train_data);
            const Dataset data = select_split(all, cfg, parse_split(train_split));
            const fs::path dir = train_common.out_dir(cfg);
            const auto t0 = std::chrono::steady_clock::now();
            train_variant(cfg, variant, data, dir, log_line);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("%s\ntrained %s on %zu samples in %.1f s\n", dir.string().c_str(), cfg.variant.c_str(),
                        data.size(), secs);
        } else if (*eval_cmd) {
            RunConfig cfg;
            require_file(eval_run);
            const GazeModel model = load_run(eval_run, &cfg);
            if (!eval_common.config.empty()) {
                require_file(eval_common.config);
                merge_json(cfg, nlohmann::json::parse(std::ifstream(eval_common.config)));
            }
            if (eval_common.seed) cfg.seed = *eval_common.seed;
            if (eval_common.threads) cfg.threads = *eval_common.threads;
            if (eval_clamp) cfg.eval.clamp_pog = true;
            const Dataset data = select_split(load_dataset(eval_data), cfg, parse_split(eval_split));
            EvalOptions opts = cfg.eval;
            opts.threads = cfg.threads;
            const fs::path dir = eval_common.out_dir(cfg);
            const EvalReport rep = evaluate(model, data, opts);
            write_eval(rep, dir);
            write_config(cfg, dir / "config.json");
            std::printf("%s\n", dir.string().c_str());
            print_report(rep);
        } else if (*abl) {
            RunConfig cfg = abl_common.resolve();
            abl_flags.apply(cfg);
            const Dataset all = load_dataset(abl_data);
            std::optional<fs::path> from;
            if (!abl_from.empty()) {
                require_file(abl_from);
                from = abl_from;
            }
            const fs::path dir = abl_common.out_dir(cfg);
            write_config(cfg, dir / "config.json");
            const AblationResult res = run_ablation(cfg, select_split(all, cfg, Split::Train),
                                                    select_split(all, cfg, Split::Test), dir, from, log_line);
            std::printf("%s\n%s", dir.string().c_str(), format_ablation_table(res.rows).c_str());
        } else if (*cc) {
            RunConfig cfg = cc_common.resolve();
            cc_flags.apply(cfg);
            if (cc_n) cfg.data.n = *cc_n;
            cfg.validate();
            std::vector<Variant> variants;
            for (const auto& v : cc_variants) variants.push_back(parse_variant(v));
            const fs::path dir = cc_common.out_dir(cfg);
            write_config(cfg, dir / "config.json");
            const CrossCameraResult res = run_cross_camera(cfg, variants, dir, log_line);
            std::printf("%s\n", dir.string().c_str());
            for (const auto& [v, m] : res.matrices) {
                std::printf("%s\n", format_cross_camera(m, std::string(variant_name(v))).c_str());
            }
        } else if (*gc) {
            const RunConfig cfg = gc_common.resolve();
            gc_opts.seed = cfg.seed;
            std::vector<GradcheckResult> results = gradcheck_ops(gc_opts);
            std::size_t params = 0;
            results.push_back(gradcheck_efe_loss(gc_opts, &params));
            bool ok = true;
            std::ofstream csv;
            if (!gc_common.out.empty()) {
                const fs::path dir = gc_common.out_dir(cfg);
                csv.open(dir / "gradcheck.csv", std::ios::binary);
                csv << "op,passed,max_rel_error,checked,skipped\n";
            }
            for (const auto& r : results) {
                ok = ok && r.passed;
                std::printf("%-22s %s  worst rel err %.3e  (%zu checked, %zu skipped)\n", r.name.c_str(),
                            r.passed ? "pass" : "FAIL", r.max_rel_error, r.checked, r.skipped);
                if (csv.is_open()) {
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%.6e", r.max_rel_error);
                    csv << r.name << ',' << (r.passed ? 1 : 0) << ',' << buf << ',' << r.checked << ','
                        << r.skipped << '\n';
                }
            }
            std::printf("efe loss model: %zu parameters, 16x9 input\n%s\n", params,
                        ok ? "all gradients match" : "gradient mismatch");
            return ok ? 0 : 1;
        } else if (*rep_cmd) {
            RunConfig cfg;
            require_file(rep_run);
            const GazeModel model = load_run(rep_run, &cfg);
            if (!rep_common.config.empty()) {
                require_file(rep_common.config);
                merge_json(cfg, nlohmann::json::parse(std::ifstream(rep_common.config)));
            }
            if (rep_common.threads) cfg.threads = *rep_common.threads;
            const Dataset data = select_split(load_dataset(rep_data), cfg, parse_split(rep_split));
            EvalOptions opts = cfg.eval;
            opts.threads = cfg.threads;
            const fs::path dir = rep_common.out_dir(cfg);
            const EvalReport rep = evaluate(model, data, opts);
            const ResidualHistogram hist =
                residual_histogram(rep, cfg.report.histogram_bins, cfg.report.histogram_extent_px);
            write_histogram_csv(hist, dir / "residual_histogram.csv");
            write_eval(rep, dir);
            if (model.variant() == Variant::Efe && cfg.report.map_dumps > 0) {
                dump_origin_maps(model, data, cfg.report.map_dumps, dir / "maps");
            }
            write_config(cfg, dir / "config.json");
            std::printf("%s\nhistogram: %zu of %zu samples binned (%zu failures)\n", dir.string().c_str(),
                        hist.total(), rep.count, rep.failures);
        }
    } catch (const MissingInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
