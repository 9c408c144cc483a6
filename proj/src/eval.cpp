#include "efe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "efe/gaze_geom.hpp"

namespace efe {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

std::string dataset_id(const Dataset& d) {
    return d.camera.id + "/seed" + std::to_string(d.seed) + "/n" + std::to_string(d.size());
}

std::optional<double> mean_of(const std::vector<SampleErrors>& s, double SampleErrors::*field) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& e : s) {
        const double v = e.*field;
        if (std::isnan(v)) continue;
        sum += v;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

Eigen::Vector2d clamp_to_screen(const Eigen::Vector2d& px, const ScreenPlane& screen) {
    return {std::clamp(px.x(), 0.0, static_cast<double>(screen.width_px)),
            std::clamp(px.y(), 0.0, static_cast<double>(screen.height_px))};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string cell(const std::optional<double>& v, int width, int precision) {
    char buf[64];
    if (v) {
        std::snprintf(buf, sizeof(buf), "%*.*f", width, precision, *v);
    } else {
        std::snprintf(buf, sizeof(buf), "%*s", width, "-");
    }
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

}  // namespace

EvalReport score_predictions(const Dataset& data, const std::vector<Prediction>& predictions,
                             const EvalOptions& opts) {
    if (predictions.size() != data.size()) {
        throw std::invalid_argument("score_predictions: " + std::to_string(predictions.size()) +
                                    " predictions for " + std::to_string(data.size()) + " samples");
    }
    EvalReport rep;
    rep.dataset_id = dataset_id(data);
    rep.count = data.size();
    rep.samples.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const GazeLabel& l = data.samples[i].label;
        const Prediction& p = predictions[i];
        SampleErrors& e = rep.samples[i];
        e.index = i;
        e.origin_mm = p.o ? (*p.o - l.o).norm() : kNan;
        e.direction_deg = p.r ? angular_error(l.r, *p.r) * kRadToDeg : kNan;
        const bool finite = p.valid && std::isfinite(p.pog_px.x()) && std::isfinite(p.pog_px.y());
        if (!finite) {
            e.failed = true;
            e.pog_px = e.pog_mm = kNan;
            e.residual_px = {kNan, kNan};
            ++rep.failures;
            continue;
        }
        const Eigen::Vector2d px = opts.clamp_pog ? clamp_to_screen(p.pog_px, data.screen) : p.pog_px;
        e.residual_px = px - l.pog_px;
        e.pog_px = e.residual_px.norm();
        e.pog_mm = (pog_px_to_mm(px, data.screen) - pog_px_to_mm(l.pog_px, data.screen)).norm();
    }
    rep.origin_mm = mean_of(rep.samples, &SampleErrors::origin_mm);
    rep.direction_deg = mean_of(rep.samples, &SampleErrors::direction_deg);
    rep.pog_px = mean_of(rep.samples, &SampleErrors::pog_px);
    rep.pog_mm = mean_of(rep.samples, &SampleErrors::pog_mm);
    return rep;
}

std::vector<Prediction> predict(const GazeModel& model, const Dataset& data, const EvalOptions& opts) {
    const auto& mc = model.config();
    if (data.channels != mc.in_channels || data.height != mc.height || data.width != mc.width) {
        throw std::invalid_argument("evaluate: dataset resolution " + std::to_string(data.channels) + "x" +
                                    std::to_string(data.height) + "x" + std::to_string(data.width) +
                                    " does not match the model's " + std::to_string(mc.in_channels) + "x" +
                                    std::to_string(mc.height) + "x" + std::to_string(mc.width));
    }
    const std::size_t n = data.size();
    const std::size_t bs = std::max<std::size_t>(opts.batch_size, 1);
    const std::size_t pixels = data.channels * data.height * data.width;
    std::vector<Prediction> preds(n);

    auto run_batch = [&](std::size_t b0) {
        const std::size_t m = std::min(bs, n - b0);
        std::vector<double> x(m * pixels);
        for (std::size_t i = 0; i < m; ++i) {
            const auto& px = data.samples[b0 + i].frame.pixels;
            std::copy(px.begin(), px.end(), x.begin() + static_cast<std::ptrdiff_t>(i * pixels));
        }
        const ModelOutputs out =
            model.infer(Tensor({m, data.channels, data.height, data.width}, std::move(x)), data.camera, data.screen);
        for (std::size_t i = 0; i < m; ++i) {
            Prediction& p = preds[b0 + i];
            if (!out.g.empty()) p.g = Eigen::Vector2d(out.g[2 * i], out.g[2 * i + 1]);
            if (!out.z.empty()) p.z = out.z[i];
            if (out.has_origin()) p.o = Eigen::Vector3d(out.o[3 * i], out.o[3 * i + 1], out.o[3 * i + 2]);
            if (out.has_direction()) p.r = Eigen::Vector3d(out.r[3 * i], out.r[3 * i + 1], out.r[3 * i + 2]);
            p.pog_px = {out.pog.px[2 * i], out.pog.px[2 * i + 1]};
            p.valid = out.pog.valid[i] != 0;
        }
    };

    const std::size_t batches = (n + bs - 1) / bs;
    const std::size_t workers = std::min(std::max<std::size_t>(opts.threads, 1), std::max<std::size_t>(batches, 1));
    if (workers <= 1) {
        for (std::size_t b = 0; b < batches; ++b) run_batch(b * bs);
        return preds;
    }
    // Static interleaved assignment: batch composition never depends on
    // scheduling, so results match the single-threaded path bitwise.
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t b = w; b < batches; b += workers) run_batch(b * bs);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return preds;
}

EvalReport evaluate(const GazeModel& model, const Dataset& data, const EvalOptions& opts) {
    EvalReport rep = score_predictions(data, predict(model, data, opts), opts);
    rep.model_id = std::string(variant_name(model.variant()));
    return rep;
}

std::vector<Prediction> mean_predictor(const Dataset& train, const Dataset& test) {
    if (train.samples.empty()) throw std::invalid_argument("mean_predictor: empty training set");
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    Eigen::Vector3d o = Eigen::Vector3d::Zero();
    for (const auto& s : train.samples) {
        r += s.label.r;
        o += s.label.o;
    }
    r.normalize();
    o /= static_cast<double>(train.size());
    Prediction p;
    p.o = o;
    p.r = r;
    p.g = project(o, test.camera);
    p.z = o.z();
    try {
        p.pog_px = intersect_screen(GazeRay{o, r}, test.camera, test.screen).px;
    } catch (const GeometryError&) {
        p.valid = false;
    }
    return std::vector<Prediction>(test.size(), p);
}

void write_samples_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out << "index,failed,origin_mm,direction_deg,pog_px,pog_mm,residual_x_px,residual_y_px\n";
    for (const auto& e : report.samples) {
        out << e.index << ',' << (e.failed ? 1 : 0) << ',' << fmt(e.origin_mm) << ',' << fmt(e.direction_deg) << ','
            << fmt(e.pog_px) << ',' << fmt(e.pog_mm) << ',' << fmt(e.residual_px.x()) << ','
            << fmt(e.residual_px.y()) << '\n';
    }
}

std::string report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    j["model"] = report.model_id;
    j["dataset"] = report.dataset_id;
    j["count"] = report.count;
    j["failures"] = report.failures;
    j["origin_mm"] = opt(report.origin_mm);
    j["direction_deg"] = opt(report.direction_deg);
    j["pog_px"] = opt(report.pog_px);
    j["pog_mm"] = opt(report.pog_mm);
    return j.dump(2) + "\n";
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    open_out(path) << report_json(report);
}

// ---------------------------------------------------------------------------

std::vector<AblationRow> ablation_rows(const std::vector<std::pair<Variant, EvalReport>>& reports) {
    std::vector<AblationRow> rows;
    for (const auto& [v, rep] : reports) {
        AblationRow row{v, rep.origin_mm, rep.direction_deg, rep.pog_px};
        if (v == Variant::DirectRegression) row.origin_mm = row.direction_deg = std::nullopt;
        rows.push_back(row);
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-18s %12s %14s %10s\n", "model", "origin (mm)", "direction (deg)", "PoG (px)");
    os << buf;
    for (const auto& r : rows) {
        os << std::string(variant_name(r.variant)).append(18 - std::min<std::size_t>(18, variant_name(r.variant).size()), ' ')
           << ' ' << cell(r.origin_mm, 12, 2) << ' ' << cell(r.direction_deg, 14, 2) << ' ' << cell(r.pog_px, 10, 2)
           << '\n';
    }
    return os.str();
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    auto v = [](const std::optional<double>& x) { return x ? fmt(*x) : std::string("-"); };
    out << "model,origin_mm,direction_deg,pog_px\n";
    for (const auto& r : rows) {
        out << variant_name(r.variant) << ',' << v(r.origin_mm) << ',' << v(r.direction_deg) << ',' << v(r.pog_px)
            << '\n';
    }
}

// ---------------------------------------------------------------------------

std::size_t CrossCameraMatrix::filled() const {
    std::size_t n = 0;
    for (const auto& row : cells) {
        for (const auto& c : row) n += c.has_value();
    }
    return n;
}

double CrossCameraMatrix::off_diagonal_mean() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : cells) {
        for (const auto& c : row) {
            if (!c) continue;
            sum += *c;
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : kNan;
}

double cross_camera_direction_error(const Prediction& p, const GazeLabel& label, const CameraModel& cam,
                                    const ScreenPlane& screen) {
    if (p.r) return angular_error(label.r, *p.r) * kRadToDeg;
    if (!p.valid) return kNan;
    // Implied direction: true origin to the predicted PoG, in camera frame.
    const Eigen::Vector2d mm = pog_px_to_mm(p.pog_px, screen);
    const Eigen::Vector3d target = screen_to_camera({mm.x(), mm.y(), 0.0}, cam);
    const Eigen::Vector3d d = target - label.o;
    if (d.norm() == 0.0) return kNan;
    return angular_error(label.r, d) * kRadToDeg;
}

double mean_cross_camera_error(const std::vector<Prediction>& predictions, const Dataset& data) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double e = cross_camera_direction_error(predictions.at(i), data.samples[i].label, data.camera, data.screen);
        if (std::isnan(e)) continue;
        sum += e;
        ++n;
    }
    return n ? sum / static_cast<double>(n) : kNan;
}

CrossCameraMatrix cross_camera_matrix(const std::vector<const GazeModel*>& models,
                                      const std::vector<const Dataset*>& tests, const EvalOptions& opts) {
    if (models.size() != tests.size() || models.empty()) {
        throw std::invalid_argument("cross_camera_matrix: need one model per test set (" +
                                    std::to_string(models.size()) + " models, " + std::to_string(tests.size()) +
                                    " test sets)");
    }
    const std::size_t k = models.size();
    CrossCameraMatrix m;
    m.cells.assign(k, std::vector<std::optional<double>>(k));
    for (const auto* t : tests) m.cameras.push_back(t->camera.id);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
            if (a == b) continue;
            m.cells[a][b] = mean_cross_camera_error(predict(*models[a], *tests[b], opts), *tests[b]);
        }
    }
    return m;
}

std::string format_cross_camera(const CrossCameraMatrix& m, const std::string& title) {
    std::ostringstream os;
    char buf[64];
    os << title << " (rows: train camera, columns: test camera, degrees)\n";
    std::snprintf(buf, sizeof(buf), "%-8s", "");
    os << buf;
    for (const auto& c : m.cameras) {
        std::snprintf(buf, sizeof(buf), " %8s", c.c_str());
        os << buf;
    }
    os << '\n';
    for (std::size_t a = 0; a < m.cells.size(); ++a) {
        std::snprintf(buf, sizeof(buf), "%-8s", m.cameras[a].c_str());
        os << buf;
        for (const auto& c : m.cells[a]) os << ' ' << cell(c, 8, 2);
        os << '\n';
    }
    std::snprintf(buf, sizeof(buf), "mean off-diagonal: %.3f\n", m.off_diagonal_mean());
    os << buf;
    return os.str();
}

void write_cross_camera_csv(const CrossCameraMatrix& m, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out << "train\\test";
    for (const auto& c : m.cameras) out << ',' << c;
    out << '\n';
    for (std::size_t a = 0; a < m.cells.size(); ++a) {
        out << m.cameras[a];
        for (const auto& c : m.cells[a]) out << ',' << (c ? fmt(*c) : std::string("-"));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------

std::size_t ResidualHistogram::total() const {
    std::size_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
}

std::size_t ResidualHistogram::bin_of(double v) const {
    const double f = std::floor((v + extent) / bin_width());
    if (!(f > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(f), bins - 1);
}

ResidualHistogram residual_histogram(const EvalReport& report, std::size_t bins, double extent) {
    if (bins == 0 || bins % 2 == 0) throw std::invalid_argument("residual_histogram: bin count must be odd");
    if (!(extent > 0.0)) throw std::invalid_argument("residual_histogram: extent must be > 0");
    ResidualHistogram h;
    h.bins = bins;
    h.extent = extent;
    h.counts.assign(bins, std::vector<std::size_t>(bins, 0));
    for (const auto& e : report.samples) {
        if (e.failed) continue;
        ++h.counts[h.bin_of(e.residual_px.y())][h.bin_of(e.residual_px.x())];
    }
    return h;
}

void write_histogram_csv(const ResidualHistogram& h, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out << "# bins," << h.bins << "\n# extent_px," << fmt(h.extent) << '\n';
    for (const char* axis : {"x_edges", "y_edges"}) {
        out << axis;
        for (std::size_t i = 0; i <= h.bins; ++i) out << ',' << fmt(-h.extent + h.bin_width() * static_cast<double>(i));
        out << '\n';
    }
    for (std::size_t r = 0; r < h.bins; ++r) {
        out << fmt(-h.extent + h.bin_width() * static_cast<double>(r));
        for (auto c : h.counts[r]) out << ',' << c;
        out << '\n';
    }
}

void dump_origin_maps(const GazeModel& model, const Dataset& data, std::size_t count,
                      const std::filesystem::path& dir) {
    const Variant v = model.variant();
    if (v != Variant::Efe) {
        throw std::invalid_argument("report: depth maps need the efe variant, got " + std::string(variant_name(v)));
    }
    count = std::min(count, data.size());
    if (count == 0) return;
    std::filesystem::create_directories(dir);
    const std::size_t pixels = data.channels * data.height * data.width;
    std::vector<double> x(count * pixels);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& px = data.samples[i].frame.pixels;
        std::copy(px.begin(), px.end(), x.begin() + static_cast<std::ptrdiff_t>(i * pixels));
    }
    const ModelOutputs out =
        model.infer(Tensor({count, data.channels, data.height, data.width}, std::move(x)), data.camera, data.screen);
    const std::size_t hw = data.height * data.width;
    for (std::size_t i = 0; i < count; ++i) {
        auto grid = [&](const Tensor& t) {
            return std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(i * hw),
                                       t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * hw));
        };
        write_pgm_with_scale(dir / ("depth_" + std::to_string(i) + ".pgm"), grid(out.d), data.height, data.width);
        write_pgm_with_scale(dir / ("heatmap_" + std::to_string(i) + ".pgm"), grid(out.h), data.height, data.width);
    }
}

}  // namespace efe
