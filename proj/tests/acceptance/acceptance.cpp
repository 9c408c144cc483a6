// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit
// code is nonzero when any selected criterion fails.
//
//   efe_acceptance [--out DIR] [N ...]     (no N runs all eight)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "efe/experiments.hpp"
#include "efe/gradcheck.hpp"
#include "efe/heatmap.hpp"

namespace fs = std::filesystem;
using namespace efe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

void note(const std::string& s) {
    std::fprintf(stderr, "  %s\n", s.c_str());
    std::fflush(stderr);
}

// ---------------------------------------------------------------------------
// 1. Gradient checks.

Outcome gradcheck_suite() {
    const auto t0 = Clock::now();
    GradcheckOptions opts;
    std::size_t ops_failed = 0, ops = 0;
    double worst = 0.0;
    for (const auto& r : gradcheck_ops(opts)) {
        ++ops;
        worst = std::max(worst, r.max_rel_error);
        if (!r.passed) {
            ++ops_failed;
            note(fmt("op %s failed: rel err %.3g", r.name.c_str(), r.max_rel_error));
        }
    }
    std::size_t params = 0;
    const GradcheckResult loss = gradcheck_efe_loss(opts, &params);
    worst = std::max(worst, loss.max_rel_error);
    const double secs = seconds_since(t0);
    const bool ok = ops_failed == 0 && loss.passed && params < 10000 && secs < 300.0;
    return {ok, fmt("%zu ops (%zu failed), EFE loss over %zu params rel err %.2e (%zu coords, %zu kink-skipped); "
                    "worst %.2e < 1e-4; %.1f s < 300 s",
                    ops, ops_failed, params, loss.max_rel_error, loss.checked, loss.skipped, worst, secs)};
}

// ---------------------------------------------------------------------------
// 2. Geometry oracles.

// Line/plane intersection by solving o + t r = a + u (b - a) + v (c - a)
// for three points on the plane, without using its normal.
Eigen::Vector3d parametric_intersection(const Eigen::Vector3d& o, const Eigen::Vector3d& r) {
    const Eigen::Vector3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
    Eigen::Matrix3d m;
    m.col(0) = r;
    m.col(1) = -(b - a);
    m.col(2) = -(c - a);
    const Eigen::Vector3d s = m.fullPivLu().solve(a - o);
    return o + s[0] * r;
}

Outcome geometry_suite() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    const ScreenPlane screen;
    const auto cams = rig_cameras(default_camera(), screen);
    const int n = 1000;
    double e_ray = 0, e_proj = 0, e_rigid = 0, e_sph = 0;
    for (int i = 0; i < n; ++i) {
        const CameraModel& cam = cams[static_cast<std::size_t>(i) % cams.size()];
        // Ray/plane against the parametric solver, through the camera frame.
        const Eigen::Vector3d o_s(rng.uniform(-200, 700), rng.uniform(-500, 200), rng.uniform(200, 1000));
        const Eigen::Vector3d tgt(rng.uniform(-100, 600), rng.uniform(-400, 100), 0.0);
        const Eigen::Vector3d r_s = (tgt - o_s).normalized();
        const PointOfGaze p =
            intersect_screen({screen_to_camera(o_s, cam), direction_to_camera(r_s, cam)}, cam, screen);
        const Eigen::Vector3d want = parametric_intersection(o_s, r_s);
        e_ray = std::max(e_ray, (p.mm - want.head<2>()).norm());
        e_ray = std::max(e_ray, (o_s + p.lambda * r_s - want).norm());

        const Eigen::Vector2d g(rng.uniform(0, 64), rng.uniform(0, 36));
        const double z = rng.uniform(100, 3000);
        const Eigen::Vector3d q = unproject(g, z, cam);
        e_proj = std::max(e_proj, (project(q, cam) - g).norm());
        e_proj = std::max(e_proj, (unproject(project(q, cam), q.z(), cam) - q).norm());

        const Eigen::Vector3d x(rng.uniform(-1000, 1000), rng.uniform(-1000, 1000), rng.uniform(-1000, 1000));
        e_rigid = std::max(e_rigid, (screen_to_camera(camera_to_screen(x, cam), cam) - x).norm());
        e_rigid = std::max(e_rigid, (camera_to_screen(screen_to_camera(x, cam), cam) - x).norm());

        const SphericalDir sd{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
        const SphericalDir back = vector_to_spherical(spherical_to_vector(sd));
        e_sph = std::max({e_sph, std::abs(back.pitch - sd.pitch), std::abs(back.yaw - sd.yaw)});
    }
    const double lambda = intersect_screen({{100, 50, 600}, {0, 0, -1}}, CameraModel{}, screen).lambda;
    const double e_lambda = std::abs(lambda - 600.0);
    const double secs = seconds_since(t0);
    const double worst = std::max({e_ray, e_proj, e_rigid, e_sph, e_lambda});
    return {worst < 1e-9 && secs < 10.0,
            fmt("%d cases each: ray/plane %.1e mm, project %.1e, rigid %.1e mm, spherical %.1e rad; "
                "lambda(o=(100,50,600), r=(0,0,-1)) = %.12g; %.2f s",
                n, e_ray, e_proj, e_rigid, e_sph, lambda, secs)};
}

// ---------------------------------------------------------------------------
// 3. Heatmap invariants.

Outcome heatmap_suite() {
    const auto t0 = Clock::now();
    Rng rng(77);
    const std::size_t h = 36, w = 64;
    double e_trans = 0, e_hot = 0, e_depth = 0, e_loss = 0;
    for (int trial = 0; trial < 200; ++trial) {
        // Mass kept away from the border so integer shifts stay inside.
        std::vector<double> p(h * w, 0.0);
        double s = 0.0;
        for (std::size_t y = 6; y + 6 < h; ++y)
            for (std::size_t x = 6; x + 6 < w; ++x) s += p[y * w + x] = std::pow(rng.uniform(), 4.0);
        for (auto& v : p) v /= s;
        const long dx = static_cast<long>(rng.below(11)) - 5, dy = static_cast<long>(rng.below(11)) - 5;
        std::vector<double> q(h * w, 0.0);
        for (std::size_t y = 6; y + 6 < h; ++y)
            for (std::size_t x = 6; x + 6 < w; ++x)
                q[static_cast<std::size_t>(static_cast<long>(y) + dy) * w + static_cast<std::size_t>(static_cast<long>(x) + dx)] =
                    p[y * w + x];
        const Tensor a = soft_argmax(Tensor({h, w}, p));
        const Tensor b = soft_argmax(Tensor({h, w}, q));
        e_trans = std::max({e_trans, std::abs(b[0] - a[0] - dx), std::abs(b[1] - a[1] - dy)});

        std::vector<double> hot(h * w, 0.0);
        const std::size_t hx = rng.below(w), hy = rng.below(h);
        hot[hy * w + hx] = 1.0;
        const Tensor g = soft_argmax(Tensor({h, w}, hot));
        e_hot = std::max({e_hot, std::abs(g[0] - static_cast<double>(hx)), std::abs(g[1] - static_cast<double>(hy))});

        const double c = rng.uniform(300, 1500);
        e_depth = std::max(e_depth, std::abs(depth_readout(Tensor({h, w}, p), Tensor::full({h, w}, c)).item() - c));

        const Tensor gt = make_gt_heatmap({rng.uniform(0, w - 1), rng.uniform(0, h - 1)}, 1.28, h, w);
        const Tensor hm({1, h, w}, std::vector<double>(gt.data().begin(), gt.data().end()));
        const Tensor gg({1, 2}, {a[0], a[1]});
        const Tensor zz({1}, {c});
        const OriginLosses l = origin_losses(hm, hm, gg, gg, zz, zz);
        e_loss = std::max({e_loss, l.heatmap.item(), l.g.item(), l.d.item()});
    }
    const double secs = seconds_since(t0);
    const bool ok = e_trans < 1e-9 && e_hot == 0.0 && e_depth < 1e-9 && e_loss == 0.0 && secs < 10.0;
    return {ok, fmt("200 maps: translation %.1e px, one-hot %.1e px, constant depth %.1e mm, loss at perfect "
                    "prediction %.1e; %.2f s",
                    e_trans, e_hot, e_depth, e_loss, secs)};
}

// ---------------------------------------------------------------------------
// 4. Convergence on the standard benchmark.

// Pilot-derived thresholds; see docs/pilot.md.
constexpr double kDirThresholdDeg = 3.0;
constexpr double kPogThresholdDiag = 0.05;

Outcome convergence(const fs::path& out) {
    const auto t0 = Clock::now();
    RunConfig cfg;  // 6250 samples: 5000 train, 1250 held out; 8 epochs
    cfg.seed = 1;
    const Dataset all = generate_for(cfg);
    const Dataset train_set = select_split(all, cfg, Split::Train);
    const Dataset test = select_split(all, cfg, Split::Test);
    const GazeModel model = train_variant(cfg, Variant::Efe, train_set, out / "convergence", note);
    const EvalReport rep = evaluate(model, test, cfg.eval);
    write_report_json(rep, out / "convergence" / "report.json");
    const EvalReport mean = score_predictions(test, mean_predictor(train_set, test));
    const double secs = seconds_since(t0);
    const double diag = test.screen.diagonal_px();
    const double dir = rep.direction_deg.value_or(1e9);
    const double pog = rep.pog_px.value_or(1e9);
    const bool ok = train_set.size() == 5000 && dir < kDirThresholdDeg && pog < kPogThresholdDiag * diag &&
                    rep.failures == 0 && secs < 1800.0;
    return {ok, fmt("%zu train / %zu test, %zu epochs: direction %.3f deg < %.1f, PoG %.1f px = %.2f%% of diagonal "
                    "< %.0f%% (origin %.1f mm, %zu failures; mean predictor %.2f deg, %.1f px); %.0f s < 1800 s",
                    train_set.size(), test.size(), cfg.train.epochs, dir, kDirThresholdDeg, pog, 100.0 * pog / diag,
                    100.0 * kPogThresholdDiag, rep.origin_mm.value_or(-1.0), rep.failures,
                    mean.direction_deg.value_or(-1.0), mean.pog_px.value_or(-1.0), secs)};
}

// ---------------------------------------------------------------------------
// 5. Ablation ordering and 6. cross-camera, on reduced benchmarks.

// Reduced ablation benchmark: 2000 train / 500 test, 6 epochs per variant.
RunConfig ablation_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.data.n = 2500;
    cfg.train.epochs = 6;
    return cfg;
}

// Reduced cross-camera suite: 1200 train / 300 test scenes per camera.
RunConfig cross_camera_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.data.n = 1500;
    cfg.train.epochs = 6;
    return cfg;
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

Outcome ablation_ordering(const fs::path& out) {
    const auto t0 = Clock::now();
    int wins = 0;
    std::ostringstream report;
    std::vector<std::vector<std::pair<Variant, double>>> pogs;
    for (std::uint64_t seed : kSeeds) {
        const RunConfig cfg = ablation_config(seed);
        const Dataset all = generate_for(cfg);
        const fs::path dir = out / ("ablation_seed" + std::to_string(seed));
        const AblationResult res = run_ablation(cfg, select_split(all, cfg, Split::Train),
                                                select_split(all, cfg, Split::Test), dir, std::nullopt, note);
        report << "seed " << seed << "\n" << format_ablation_table(res.rows);
        std::vector<std::pair<Variant, double>> row;
        for (const auto& r : res.rows) row.emplace_back(r.variant, r.pog_px.value_or(1e9));
        auto pog_of = [&](Variant v) {
            return std::find_if(row.begin(), row.end(), [&](const auto& p) { return p.first == v; })->second;
        };
        const double efe = pog_of(Variant::Efe), nodepth = pog_of(Variant::EfeNoDepthMap);
        wins += efe <= nodepth;
        note(fmt("seed %llu: EFE %.1f px vs no-depth %.1f px", static_cast<unsigned long long>(seed), efe, nodepth));
        pogs.push_back(row);
    }
    // Every other pairwise PoG ordering, reported only.
    report << "\npairwise PoG orderings (row <= column, seeds out of 3)\n";
    const auto& vs = all_variants();
    for (Variant a : vs) {
        for (Variant b : vs) {
            if (a == b) continue;
            int n = 0;
            for (const auto& row : pogs) {
                auto get = [&](Variant v) {
                    return std::find_if(row.begin(), row.end(), [&](const auto& p) { return p.first == v; })->second;
                };
                n += get(a) <= get(b);
            }
            report << "  " << variant_name(a) << " <= " << variant_name(b) << ": " << n << "/3\n";
        }
    }
    fs::create_directories(out);
    std::ofstream(out / "ablation_report.txt") << report.str();
    std::fputs(report.str().c_str(), stderr);
    return {wins >= 2, fmt("EFE PoG <= EFE-without-depth-map PoG in %d/3 seeds (2000 train, 6 epochs); "
                           "other orderings in ablation_report.txt; %.0f s",
                           wins, seconds_since(t0))};
}

Outcome cross_camera(const fs::path& out) {
    const auto t0 = Clock::now();
    int wins = 0;
    bool shape_ok = true;
    std::string cells;
    for (std::uint64_t seed : kSeeds) {
        const RunConfig cfg = cross_camera_config(seed);
        const CrossCameraResult res = run_cross_camera(cfg, {Variant::Efe, Variant::DirectRegression},
                                                       out / ("cross_camera_seed" + std::to_string(seed)), note);
        double efe = 0, direct = 0, efe_web = 0, direct_web = 0;
        for (const auto& [v, m] : res.matrices) {
            shape_ok = shape_ok && m.cameras.size() == 4 && m.cells.size() == 4 && m.filled() == 12;
            for (std::size_t i = 0; i < m.cells.size(); ++i) shape_ok = shape_ok && !m.cells[i][i].has_value();
            (v == Variant::Efe ? efe : direct) = m.off_diagonal_mean();
            // Reported only: the three cameras above the display, without MVC.
            double web = 0;
            int n = 0;
            for (std::size_t a = 0; a < m.cells.size(); ++a) {
                for (std::size_t b = 0; b < m.cells.size(); ++b) {
                    if (m.cameras[a] == "MVC" || m.cameras[b] == "MVC" || !m.cells[a][b]) continue;
                    web += *m.cells[a][b];
                    ++n;
                }
            }
            (v == Variant::Efe ? efe_web : direct_web) = n ? web / n : 0.0;
            std::fputs(format_cross_camera(m, std::string(variant_name(v))).c_str(), stderr);
        }
        wins += efe <= direct;
        cells += fmt("%sseed %llu: EFE %.2f vs direct %.2f deg, webcams only %.2f vs %.2f",
                     cells.empty() ? "" : "; ", static_cast<unsigned long long>(seed), efe, direct, efe_web,
                     direct_web);
    }
    return {shape_ok && wins >= 2, fmt("4x4 matrices with 12 off-diagonal cells and empty diagonal: %s; EFE mean "
                                       "off-diagonal direction error <= direct regression in %d/3 seeds (%s); %.0f s",
                                       shape_ok ? "yes" : "no", wins, cells.c_str(), seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// 7. Determinism and 8. warmup, through the CLI.

int run_cli(const std::string& args) {
    const std::string cmd = std::string(EFE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative paths of every regular file under `dir`, sorted.
std::vector<std::string> files_under(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Outcome determinism(const fs::path& out) {
    const auto t0 = Clock::now();
    const fs::path root = out / "determinism";
    fs::remove_all(root);
    std::vector<std::string> problems;
    std::size_t compared = 0;
    for (const char* rep : {"a", "b"}) {
        const fs::path d = root / rep;
        const std::string data = (d / "data" / "dataset.efeds").string();
        if (run_cli("gen-data --seed 5 --n 240 --out " + (d / "data").string()) != 0) problems.push_back("gen-data failed");
        if (run_cli("train --seed 5 --data " + data + " --epochs 2 --batch-size 16 --warmup-steps 6 --out " +
                    (d / "train").string()) != 0)
            problems.push_back("train failed");
        if (run_cli("eval --seed 5 --threads 2 --run " + (d / "train").string() + " --data " + data + " --out " +
                    (d / "eval").string()) != 0)
            problems.push_back("eval failed");
    }
    for (const char* stage : {"data", "train", "eval"}) {
        const auto fa = files_under(root / "a" / stage), fb = files_under(root / "b" / stage);
        if (fa != fb || fa.empty()) {
            problems.push_back(std::string(stage) + ": different file sets");
            continue;
        }
        for (const auto& f : fa) {
            ++compared;
            if (bytes_of(root / "a" / stage / f) != bytes_of(root / "b" / stage / f)) {
                problems.push_back(std::string(stage) + "/" + f + " differs");
            }
        }
    }
    std::string detail = fmt("gen-data, train, eval run twice with seed 5: %zu artifacts compared byte for byte", compared);
    for (const auto& p : problems) detail += "; " + p;
    return {problems.empty() && compared > 0, detail + fmt("; %.0f s", seconds_since(t0))};
}

Outcome warmup(const fs::path& out) {
    const fs::path root = out / "warmup";
    fs::remove_all(root);
    const std::string data = (root / "data" / "dataset.efeds").string();
    // Default warmup: two epochs without the PoG term; 160 train samples
    // at batch 32 give 5 steps per epoch, so the boundary is step 10.
    if (run_cli("gen-data --seed 3 --n 200 --out " + (root / "data").string()) != 0 ||
        run_cli("train --seed 3 --data " + data + " --epochs 3 --out " + (root / "train").string()) != 0) {
        return {false, "CLI run failed"};
    }
    std::ifstream in(root / "train" / "metrics.csv");
    std::string line;
    std::getline(in, line);
    const auto cols = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        for (std::string c; std::getline(ss, c, ',');) out.push_back(c);
        return out;
    };
    const auto header = cols(line);
    const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), "L_PoG") - header.begin());
    if (idx >= header.size()) return {false, "no L_PoG column"};
    const std::size_t boundary = TrainConfig{}.pog_start_step(5);
    std::size_t rows = 0, zero_before = 0, nonzero_after = 0, after = 0;
    while (std::getline(in, line)) {
        const auto c = cols(line);
        const std::size_t step = std::stoul(c[0]);
        const double v = std::stod(c[idx]);
        ++rows;
        if (step < boundary) {
            zero_before += v == 0.0;
        } else {
            ++after;
            nonzero_after += v != 0.0;
        }
    }
    const bool ok = rows == 15 && zero_before == boundary && after > 0 && nonzero_after == after;
    return {ok, fmt("%zu steps, boundary at step %zu: L_PoG exactly 0 on %zu/%zu steps before, nonzero on %zu/%zu "
                    "steps from the boundary on",
                    rows, boundary, zero_before, boundary, nonzero_after, after)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EFE acceptance checks", "efe_acceptance"};
    std::string out_dir = (fs::temp_directory_path() / "efe_acceptance").string();
    std::vector<int> which;
    app.add_option("--out", out_dir, "artifact directory");
    app.add_option("criteria", which, "criterion numbers (default: all)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);
    if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};

    const fs::path out = out_dir;
    fs::create_directories(out);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient checks", gradcheck_suite},
        {"geometry oracles", geometry_suite},
        {"heatmap invariants", heatmap_suite},
        {"synthetic convergence", [&] { return convergence(out); }},
        {"ablation ordering", [&] { return ablation_ordering(out); }},
        {"cross-camera protocol", [&] { return cross_camera(out); }},
        {"determinism", [&] { return determinism(out); }},
        {"staged PoG schedule", [&] { return warmup(out); }},
    };
    bool all = true;
    for (int k : which) {
        const auto& [name, fn] = criteria[static_cast<std::size_t>(k - 1)];
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", k, name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        std::ofstream(out / ("criterion_" + std::to_string(k) + ".txt"))
            << (o.pass ? "PASS" : "FAIL") << " [" << k << "] " << name << ": " << o.detail << '\n';
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
