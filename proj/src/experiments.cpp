#include "efe/experiments.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

namespace efe {

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "all") return Split::All;
    throw std::invalid_argument("unknown split '" + name + "' (expected train, val, test or all)");
}

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::All: return "all";
    }
    return "?";
}

Dataset select_split(const Dataset& data, const RunConfig& cfg, Split split) {
    if (split == Split::All) return data;
    const SplitRanges r = split_ranges(data.size(), cfg.data.train_fraction, cfg.data.val_fraction);
    const auto& range = split == Split::Train ? r.train : split == Split::Val ? r.val : r.test;
    if (range[0] == range[1]) {
        throw std::invalid_argument("split '" + std::string(split_name(split)) + "' of " +
                                    std::to_string(data.size()) + " samples is empty");
    }
    return slice_dataset(data, range[0], range[1]);
}

Dataset generate_for(const RunConfig& cfg) {
    const CameraModel cam = cfg.resolved_camera();
    const auto& ids = kRigCameraIds;
    std::uint32_t index = 0;
    for (std::uint32_t i = 0; i < ids.size(); ++i) {
        if (cam.id == ids[i]) index = i;
    }
    return generate_dataset(cfg.data.scene, cam, cfg.screen, cfg.data.n, cfg.seed, index);
}

GazeModel train_variant(const RunConfig& cfg, Variant variant, const Dataset& train_data,
                        const std::filesystem::path& out_dir, const LogFn& log) {
    RunConfig run = cfg;
    run.variant = std::string(variant_name(variant));
    // The dataset decides the camera; record it so the config matches.
    const CameraModel& cam = train_data.camera;
    run.camera.fx = cam.fx;
    run.camera.fy = cam.fy;
    run.camera.cx = cam.cx;
    run.camera.cy = cam.cy;
    run.camera.width = cam.width;
    run.camera.height = cam.height;
    for (const char* id : kRigCameraIds) {
        if (cam.id == id) run.camera_id = id;
    }
    run.screen = train_data.screen;
    run.model.height = train_data.height;
    run.model.width = train_data.width;
    run.model.in_channels = train_data.channels;
    GazeModel model(variant, run.model, init_seed(run));
    TrainConfig tc = run.train;
    tc.seed = shuffle_seed(run);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_config(run, out_dir / "config.json");
    }
    ProgressFn progress;
    if (log) {
        const std::size_t every = std::max<std::size_t>(1, tc.batch_size ? 4000 / tc.batch_size : 100);
        progress = [&, every](const StepRecord& r, std::size_t total) {
            if (r.step % every != 0 && r.step + 1 != total) return;
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s step %zu/%zu epoch %zu loss %.5f", run.variant.c_str(), r.step + 1,
                          total, r.epoch, r.terms.total);
            log(buf);
        };
    }
    train(model, train_data, tc, out_dir, progress);
    return model;
}

GazeModel load_run(const std::filesystem::path& run_dir, RunConfig* cfg_out) {
    const auto cfg_path = run_dir / "config.json";
    const auto ckpt = run_dir / "model.ckpt";
    for (const auto& p : {cfg_path, ckpt}) {
        if (!std::filesystem::exists(p)) throw std::runtime_error("missing input: " + p.string());
    }
    RunConfig cfg = load_config(cfg_path);
    GazeModel model(parse_variant(cfg.variant), cfg.model, init_seed(cfg));
    model.load(ckpt);
    if (cfg_out) *cfg_out = cfg;
    return model;
}

AblationResult run_ablation(const RunConfig& cfg, const Dataset& train_data, const Dataset& test,
                            const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& from,
                            const LogFn& log) {
    if (from) {
        for (Variant v : all_variants()) {
            const auto ckpt = *from / std::string(variant_name(v)) / "model.ckpt";
            if (!std::filesystem::exists(ckpt)) {
                throw std::runtime_error("ablation: missing checkpoint for variant '" + std::string(variant_name(v)) +
                                         "': " + ckpt.string());
            }
        }
    }
    AblationResult res;
    EvalOptions eo = cfg.eval;
    eo.threads = cfg.threads;
    for (Variant v : all_variants()) {
        const std::string name(variant_name(v));
        const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path{} : out_dir / name;
        GazeModel model = from ? load_run(*from / name) : train_variant(cfg, v, train_data, dir, log);
        EvalReport rep = evaluate(model, test, eo);
        if (!dir.empty()) {
            write_report_json(rep, dir / "report.json");
            write_samples_csv(rep, dir / "samples.csv");
        }
        if (log) log(name + " evaluated");
        res.reports.emplace_back(v, std::move(rep));
    }
    res.rows = ablation_rows(res.reports);
    if (!out_dir.empty()) {
        write_ablation_csv(res.rows, out_dir / "ablation.csv");
        std::ofstream(out_dir / "ablation.txt", std::ios::binary) << format_ablation_table(res.rows);
    }
    return res;
}

CrossCameraResult run_cross_camera(const RunConfig& cfg, const std::vector<Variant>& variants,
                                   const std::filesystem::path& out_dir, const LogFn& log) {
    const std::vector<CameraModel> cams = rig_cameras(cfg.camera, cfg.screen);
    const CameraModel reference = cfg.resolved_camera();
    const std::vector<Dataset> suite =
        multi_camera_suite(cfg.data.scene, reference, cams, cfg.screen, cfg.data.n, cfg.seed);
    std::vector<Dataset> trains, tests;
    for (const auto& d : suite) {
        trains.push_back(select_split(d, cfg, Split::Train));
        tests.push_back(select_split(d, cfg, Split::Test));
    }
    std::vector<const Dataset*> test_ptrs;
    for (const auto& t : tests) test_ptrs.push_back(&t);

    EvalOptions eo = cfg.eval;
    eo.threads = cfg.threads;
    CrossCameraResult res;
    std::string text;
    for (Variant v : variants) {
        const std::string name(variant_name(v));
        std::vector<GazeModel> models;
        for (std::size_t c = 0; c < cams.size(); ++c) {
            const std::filesystem::path dir =
                out_dir.empty() ? std::filesystem::path{} : out_dir / name / std::string(kRigCameraIds[c]);
            if (log) log("cross-camera: training " + name + " on " + cams[c].id);
            models.push_back(train_variant(cfg, v, trains[c], dir, log));
        }
        std::vector<const GazeModel*> ptrs;
        for (const auto& m : models) ptrs.push_back(&m);
        CrossCameraMatrix m = cross_camera_matrix(ptrs, test_ptrs, eo);
        text += format_cross_camera(m, name) + "\n";
        if (!out_dir.empty()) write_cross_camera_csv(m, out_dir / ("cross_camera_" + name + ".csv"));
        res.matrices.emplace_back(v, std::move(m));
    }
    if (!out_dir.empty()) {
        std::ofstream(out_dir / "cross_camera.txt", std::ios::binary) << text;
        std::ofstream cmp(out_dir / "comparison.csv", std::ios::binary);
        cmp << "model,mean_off_diagonal_deg,filled_cells\n";
        for (const auto& [v, m] : res.matrices) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", m.off_diagonal_mean());
            cmp << variant_name(v) << ',' << buf << ',' << m.filled() << '\n';
        }
    }
    return res;
}

std::string file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

}  // namespace efe
