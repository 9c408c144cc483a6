#include "efe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "efe/binary_io.hpp"
#include "efe/gaze_geom.hpp"

namespace efe {

namespace {

constexpr char kMagic[8] = {'E', 'F', 'E', 'D', 'S', 'E', 'T', '1'};
constexpr std::size_t kLabelDoubles = 13;

// Per-channel colors of the background and the face.
constexpr std::array<double, 3> kBackground{1.0, 1.12, 1.28};
constexpr std::array<double, 3> kSkin{0.85, 0.66, 0.55};

Eigen::Vector2d target_lo(const SceneSpec& spec, const ScreenPlane& screen) {
    if (spec.target_min == spec.target_max) return {0.0, -screen.height_mm};
    return spec.target_min;
}

Eigen::Vector2d target_hi(const SceneSpec& spec, const ScreenPlane& screen) {
    if (spec.target_min == spec.target_max) return {screen.width_mm, 0.0};
    return spec.target_max;
}

}  // namespace

void SceneSpec::validate() const {
    if (!(head_min.z() > 0.0)) throw std::invalid_argument("scene: head box must lie in front of the camera");
    for (int i = 0; i < 3; ++i) {
        if (!(head_min[i] <= head_max[i])) throw std::invalid_argument("scene: head box min exceeds max");
    }
    if (!(head_radius_min > 0.0) || !(head_radius_min <= head_radius_max)) {
        throw std::invalid_argument("scene: invalid head radius range");
    }
    if (!(target_min.x() <= target_max.x()) || !(target_min.y() <= target_max.y())) {
        throw std::invalid_argument("scene: target rectangle min exceeds max");
    }
    if (!(noise_sigma >= 0.0) || !(ambient >= 0.0)) throw std::invalid_argument("scene: negative noise or ambient");
    if (max_retries == 0) throw std::invalid_argument("scene: max_retries must be positive");
    if (!(eye_size > 0.0)) throw std::invalid_argument("scene: eye_size must be > 0");
}

GazeLabel label_scene(const Scene& scene, const CameraModel& cam, const ScreenPlane& screen,
                      std::uint32_t camera_index) {
    GazeLabel l;
    l.o = screen_to_camera(scene.head_screen, cam);
    const Eigen::Vector3d target(scene.target_mm.x(), scene.target_mm.y(), 0.0);
    l.r = direction_to_camera((target - scene.head_screen).normalized(), cam);
    l.g = project(l.o, cam);
    l.z = l.o.z();
    const PointOfGaze pog = intersect_screen(GazeRay{l.o, l.r}, cam, screen);
    l.pog_mm = pog.mm;
    l.pog_px = pog.px;
    l.camera = camera_index;
    return l;
}

bool scene_visible(const Scene& scene, const CameraModel& cam) {
    const Eigen::Vector3d o = screen_to_camera(scene.head_screen, cam);
    if (!(o.z() > 0.0)) return false;
    const Eigen::Vector2d g = project(o, cam);
    const double rx = cam.fx * scene.head_radius / o.z();
    const double ry = cam.fy * scene.head_radius / o.z();
    return g.x() - rx >= 0.0 && g.y() - ry >= 0.0 && g.x() + rx <= static_cast<double>(cam.width) - 1.0 &&
           g.y() + ry <= static_cast<double>(cam.height) - 1.0;
}

Scene draw_scene(const SceneSpec& spec, const CameraModel& reference, const std::vector<CameraModel>& cams,
                 const ScreenPlane& screen, Rng& rng) {
    spec.validate();
    const Eigen::Vector2d lo = target_lo(spec, screen);
    const Eigen::Vector2d hi = target_hi(spec, screen);
    for (std::uint32_t attempt = 0; attempt < spec.max_retries; ++attempt) {
        Eigen::Vector3d head;
        for (int i = 0; i < 3; ++i) head[i] = rng.uniform(spec.head_min[i], spec.head_max[i]);
        Scene s;
        s.head_screen = camera_to_screen(head, reference);
        s.head_radius = rng.uniform(spec.head_radius_min, spec.head_radius_max);
        s.target_mm = {rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y())};
        if (!(s.head_screen.z() > 0.0)) continue;
        if (std::all_of(cams.begin(), cams.end(), [&](const CameraModel& c) { return scene_visible(s, c); })) {
            return s;
        }
    }
    throw std::runtime_error("scene: no visible head position after " + std::to_string(spec.max_retries) +
                             " draws; the head box does not fit the camera frame");
}

Image render_scene(const Scene& scene, const GazeLabel& label, const CameraModel& cam, const SceneSpec& spec,
                   Rng& noise_rng) {
    Image img(3, cam.height, cam.width);
    const double rx = cam.fx * scene.head_radius / label.z;
    const double ry = cam.fy * scene.head_radius / label.z;
    const SphericalDir dir = vector_to_spherical(label.r);
    const double ex = spec.eye_gain * rx * dir.yaw;
    const double ey = spec.eye_gain * ry * dir.pitch;
    const std::array<Eigen::Vector2d, 2> eyes{
        Eigen::Vector2d(label.g.x() - spec.eye_spacing * rx + ex, label.g.y() - 0.3 * ry + ey),
        Eigen::Vector2d(label.g.x() + spec.eye_spacing * rx + ex, label.g.y() - 0.3 * ry + ey)};
    const double eye_sigma = std::max(spec.eye_size * rx, 0.5);
    const double inv_eye = 1.0 / (2.0 * eye_sigma * eye_sigma);

    for (std::size_t y = 0; y < cam.height; ++y) {
        for (std::size_t x = 0; x < cam.width; ++x) {
            const double dx = (static_cast<double>(x) - label.g.x()) / rx;
            const double dy = (static_cast<double>(y) - label.g.y()) / ry;
            const double rho = std::sqrt(dx * dx + dy * dy);
            // Anti-aliased edge: coverage ramps over one pixel at the rim.
            const double coverage = std::clamp((1.0 - rho) * std::min(rx, ry) + 0.5, 0.0, 1.0);
            const double shade = 0.8 - 0.15 * dx - 0.2 * dy;
            double eye = 0.0;
            for (const auto& e : eyes) {
                const double ddx = static_cast<double>(x) - e.x();
                const double ddy = static_cast<double>(y) - e.y();
                eye += std::exp(-(ddx * ddx + ddy * ddy) * inv_eye);
            }
            const double darken = 1.0 - 0.85 * std::min(eye, 1.0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double bg = spec.ambient * kBackground[c];
                const double face = kSkin[c] * shade * darken;
                img.at(c, y, x) = static_cast<float>(bg * (1.0 - coverage) + face * coverage);
            }
        }
    }
    if (spec.noise_sigma > 0.0) {
        for (auto& p : img.pixels) p = static_cast<float>(p + spec.noise_sigma * noise_rng.normal());
    }
    return img;
}

GazeSample render_sample(const SceneSpec& spec, const CameraModel& cam, const ScreenPlane& screen, Rng& rng) {
    const Scene scene = draw_scene(spec, cam, {cam}, screen, rng);
    GazeSample s;
    s.label = label_scene(scene, cam, screen, 0);
    s.frame = render_scene(scene, s.label, cam, spec, rng);
    return s;
}

Dataset generate_dataset(const SceneSpec& spec, const CameraModel& cam, const ScreenPlane& screen, std::size_t n,
                         std::uint64_t seed, std::uint32_t camera_index) {
    if (n == 0) throw std::invalid_argument("generate_dataset: sample count must be positive");
    cam.validate();
    screen.validate();
    Dataset ds;
    ds.camera = cam;
    ds.screen = screen;
    ds.seed = seed;
    ds.camera_index = camera_index;
    ds.height = cam.height;
    ds.width = cam.width;
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        const Scene scene = draw_scene(spec, cam, {cam}, screen, rng);
        GazeSample s;
        s.label = label_scene(scene, cam, screen, camera_index);
        s.frame = render_scene(scene, s.label, cam, spec, rng);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

CameraModel default_camera() {
    CameraModel cam;
    const ScreenPlane screen;
    cam.id = "W_C";
    cam.extrinsics = rig_cameras(cam, screen)[1].extrinsics;
    return cam;
}

std::vector<CameraModel> rig_cameras(const CameraModel& intrinsics, const ScreenPlane& screen) {
    const double cx = screen.width_mm / 2.0;
    const Eigen::Vector3d head(cx, -screen.height_mm / 2.0, 600.0);
    const std::array<Eigen::Vector3d, 4> positions{
        Eigen::Vector3d(cx, -screen.height_mm - 15.0, 0.0), Eigen::Vector3d(cx, 15.0, 0.0),
        Eigen::Vector3d(cx - 200.0, 15.0, 0.0), Eigen::Vector3d(cx + 200.0, 15.0, 0.0)};
    std::vector<CameraModel> cams;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        CameraModel c = intrinsics;
        c.id = kRigCameraIds[i];
        c.extrinsics = look_at_extrinsics(positions[i], head);
        cams.push_back(c);
    }
    return cams;
}

std::vector<Dataset> multi_camera_suite(const SceneSpec& spec, const CameraModel& reference,
                                        const std::vector<CameraModel>& cams, const ScreenPlane& screen,
                                        std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("multi_camera_suite: sample count must be positive");
    if (cams.empty()) throw std::invalid_argument("multi_camera_suite: no cameras");
    screen.validate();
    std::vector<Dataset> out(cams.size());
    for (std::size_t c = 0; c < cams.size(); ++c) {
        cams[c].validate();
        out[c].camera = cams[c];
        out[c].screen = screen;
        out[c].seed = seed;
        out[c].camera_index = static_cast<std::uint32_t>(c);
        out[c].height = cams[c].height;
        out[c].width = cams[c].width;
        out[c].samples.reserve(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t stream = derive_seed(seed, i);
        Rng rng(stream);
        const Scene scene = draw_scene(spec, reference, cams, screen, rng);
        for (std::size_t c = 0; c < cams.size(); ++c) {
            Rng noise(derive_seed(stream, c + 1));
            GazeSample s;
            s.label = label_scene(scene, cams[c], screen, static_cast<std::uint32_t>(c));
            s.frame = render_scene(scene, s.label, cams[c], spec, noise);
            out[c].samples.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
    io::Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(kDatasetVersion);
    w.u64(ds.samples.size());
    w.u32(static_cast<std::uint32_t>(ds.channels));
    w.u32(static_cast<std::uint32_t>(ds.height));
    w.u32(static_cast<std::uint32_t>(ds.width));
    w.u64(ds.seed);
    w.u32(static_cast<std::uint32_t>(ds.camera.id.size()));
    w.bytes(ds.camera.id.data(), ds.camera.id.size());
    w.u32(ds.camera_index);
    w.f64(ds.camera.fx);
    w.f64(ds.camera.fy);
    w.f64(ds.camera.cx);
    w.f64(ds.camera.cy);
    w.u32(static_cast<std::uint32_t>(ds.camera.width));
    w.u32(static_cast<std::uint32_t>(ds.camera.height));
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) w.f64(ds.camera.extrinsics(r, c));
    w.f64(ds.screen.width_mm);
    w.f64(ds.screen.height_mm);
    w.u32(static_cast<std::uint32_t>(ds.screen.width_px));
    w.u32(static_cast<std::uint32_t>(ds.screen.height_px));
    w.f64(ds.screen.origin_px.x());
    w.f64(ds.screen.origin_px.y());
    const std::size_t index_at = w.size();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) w.u64(0);
    const std::size_t pixels = ds.channels * ds.height * ds.width;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        if (s.frame.pixels.size() != pixels) {
            throw std::invalid_argument("write_dataset: sample " + std::to_string(i) + " has the wrong image size");
        }
        w.patch_u64(index_at + 8 * i, w.size());
        for (float p : s.frame.pixels) w.f32(p);
        const auto& l = s.label;
        for (double v : {l.g.x(), l.g.y(), l.z, l.o.x(), l.o.y(), l.o.z(), l.r.x(), l.r.y(), l.r.z(), l.pog_px.x(),
                         l.pog_px.y(), l.pog_mm.x(), l.pog_mm.y()}) {
            w.f64(v);
        }
        w.u32(l.camera);
    }
    try {
        w.save(path);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("write_dataset: ") + e.what());
    }
}

Dataset read_dataset(const std::filesystem::path& path) {
    io::Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (!std::equal(magic, magic + 8, kMagic)) {
        throw std::runtime_error("'" + path.string() + "' is not a dataset file");
    }
    if (const auto v = r.u32(); v != kDatasetVersion) {
        throw std::runtime_error("'" + path.string() + "': unsupported dataset version " + std::to_string(v));
    }
    Dataset ds;
    const std::uint64_t count = r.u64();
    ds.channels = r.u32();
    ds.height = r.u32();
    ds.width = r.u32();
    ds.seed = r.u64();
    std::string id(r.u32(), '\0');
    r.bytes(id.data(), id.size());
    ds.camera.id = id;
    ds.camera_index = r.u32();
    ds.camera.fx = r.f64();
    ds.camera.fy = r.f64();
    ds.camera.cx = r.f64();
    ds.camera.cy = r.f64();
    ds.camera.width = r.u32();
    ds.camera.height = r.u32();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) ds.camera.extrinsics(i, j) = r.f64();
    ds.screen.width_mm = r.f64();
    ds.screen.height_mm = r.f64();
    ds.screen.width_px = r.u32();
    ds.screen.height_px = r.u32();
    ds.screen.origin_px.x() = r.f64();
    ds.screen.origin_px.y() = r.f64();
    std::vector<std::uint64_t> offsets(count);
    for (auto& o : offsets) o = r.u64();
    ds.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        r.seek(offsets[i]);
        auto& s = ds.samples[i];
        s.frame = Image(ds.channels, ds.height, ds.width);
        for (auto& p : s.frame.pixels) p = r.f32();
        double v[kLabelDoubles];
        for (double& x : v) x = r.f64();
        auto& l = s.label;
        l.g = {v[0], v[1]};
        l.z = v[2];
        l.o = {v[3], v[4], v[5]};
        l.r = {v[6], v[7], v[8]};
        l.pog_px = {v[9], v[10]};
        l.pog_mm = {v[11], v[12]};
        l.camera = r.u32();
    }
    return ds;
}

SplitRanges split_ranges(std::size_t n, double train_fraction, double val_fraction) {
    if (!(train_fraction >= 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction > 1.0 + 1e-12) {
        throw std::invalid_argument("split_ranges: fractions must be non-negative and sum to at most 1");
    }
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    const auto n_val =
        std::min(n - n_train, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
    SplitRanges s;
    s.train = {0, n_train};
    s.val = {n_train, n_train + n_val};
    s.test = {n_train + n_val, n};
    return s;
}

Dataset slice_dataset(const Dataset& ds, std::size_t begin, std::size_t end) {
    if (begin > end || end > ds.size()) {
        throw std::out_of_range("slice_dataset: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + std::to_string(ds.size()) + " samples");
    }
    Dataset out = ds;
    out.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       ds.samples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

}  // namespace efe
