#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "efe/gaze_geom.hpp"
#include "efe/synth.hpp"

using namespace efe;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Pixels along the head's center row that the disc touches.
double measured_radius(double z) {
    CameraModel cam;
    cam.fx = cam.fy = 500.0;
    cam.width = 640;
    cam.height = 360;
    cam.cx = 320.0;
    cam.cy = 180.0;
    SceneSpec spec;
    spec.ambient = 0.0;
    spec.noise_sigma = 0.0;
    Scene scene;
    scene.head_screen = {0.0, 0.0, z};
    scene.head_radius = 85.0;
    const GazeLabel label = label_scene(scene, cam, ScreenPlane{}, 0);
    Rng rng(1);
    const Image img = render_scene(scene, label, cam, spec, rng);
    std::size_t covered = 0;
    for (std::size_t x = 0; x < cam.width; ++x) covered += img.at(0, 180, x) > 0.0f;
    // Coverage is positive out to r + 0.5 on either side.
    return (static_cast<double>(covered) - 1.0) / 2.0;
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("labels are self-consistent") {
    Rng rng(41);
    const ScreenPlane screen;
    const auto cams = rig_cameras(default_camera(), screen);
    const SceneSpec spec;
    for (int i = 0; i < 10000; ++i) {
        const CameraModel& cam = cams[static_cast<std::size_t>(i) % cams.size()];
        const Scene s = draw_scene(spec, cam, {cam}, screen, rng);
        const GazeLabel l = label_scene(s, cam, screen, 0);
        REQUIRE((unproject(l.g, l.z, cam) - l.o).norm() < 1e-9);
        REQUIRE(std::abs(l.r.norm() - 1.0) < 1e-12);
        REQUIRE((l.pog_mm - s.target_mm).norm() < 1e-9);
        REQUIRE((pog_mm_to_px(l.pog_mm, screen) - l.pog_px).norm() < 1e-9);
        const PointOfGaze p = intersect_screen({l.o, l.r}, cam, screen);
        REQUIRE((p.mm - l.pog_mm).norm() < 1e-9);
    }
}

TEST_CASE("head size follows depth") {
    const double near = measured_radius(600.0);
    const double far = measured_radius(1200.0);
    CHECK(near == doctest::Approx(500.0 * 85.0 / 600.0).epsilon(0.02));
    CHECK(near / far == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("empty dataset is an error") {
    CHECK_THROWS(generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 0, 1));
}

TEST_CASE("generation is deterministic per seed") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto a = dir / "efe_unit_a.efeds", b = dir / "efe_unit_b.efeds", c = dir / "efe_unit_c.efeds";
    write_dataset(generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 30, 5), a);
    write_dataset(generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 30, 5), b);
    write_dataset(generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 30, 6), c);
    CHECK(file_bytes(a) == file_bytes(b));
    CHECK(file_bytes(a) != file_bytes(c));
    for (const auto& p : {a, b, c}) std::filesystem::remove(p);
}

TEST_CASE("sample i does not depend on n") {
    const Dataset small = generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 5, 9);
    const Dataset big = generate_dataset(SceneSpec{}, default_camera(), ScreenPlane{}, 12, 9);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(small.samples[i].frame.pixels == big.samples[i].frame.pixels);
        CHECK(small.samples[i].label.o == big.samples[i].label.o);
    }
}

TEST_CASE("dataset file round trip") {
    const Dataset d = generate_dataset(SceneSpec{}, rig_cameras(default_camera(), ScreenPlane{})[2], ScreenPlane{}, 7, 3, 2);
    const auto path = std::filesystem::temp_directory_path() / "efe_unit_rt.efeds";
    write_dataset(d, path);
    const Dataset r = read_dataset(path);
    REQUIRE(r.size() == 7);
    CHECK(r.camera.id == d.camera.id);
    CHECK(r.camera.extrinsics == d.camera.extrinsics);
    CHECK(r.camera_index == 2);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(r.samples[i].frame.pixels == d.samples[i].frame.pixels);
        CHECK(r.samples[i].label.pog_px == d.samples[i].label.pog_px);
        CHECK(r.samples[i].label.r == d.samples[i].label.r);
    }
    std::ofstream(path, std::ios::binary) << "garbage";
    CHECK_THROWS(read_dataset(path));
    std::filesystem::remove(path);
}

TEST_CASE("splits are disjoint and exhaustive") {
    for (std::size_t n : {1ul, 2ul, 7ul, 100ul, 6250ul}) {
        for (double tf : {0.0, 0.5, 0.8, 1.0}) {
            for (double vf : {0.0, 0.1}) {
                if (tf + vf > 1.0) continue;
                const SplitRanges r = split_ranges(n, tf, vf);
                CHECK(r.train[0] == 0);
                CHECK(r.train[1] == r.val[0]);
                CHECK(r.val[1] == r.test[0]);
                CHECK(r.test[1] == n);
                CHECK(r.train[0] <= r.train[1]);
                CHECK(r.val[0] <= r.val[1]);
            }
        }
    }
    CHECK_THROWS(split_ranges(10, 0.9, 0.2));
    CHECK_THROWS(split_ranges(10, -0.1, 0.0));
}

TEST_CASE("targets are uniform over the screen") {
    // 10 x 10 cells, 99 degrees of freedom; critical value at alpha 0.01.
    const double critical = 134.642;
    const ScreenPlane screen;
    const CameraModel cam = default_camera();
    Rng rng(43);
    std::vector<double> counts(100, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Scene s = draw_scene(SceneSpec{}, cam, {cam}, screen, rng);
        REQUIRE(s.target_mm.x() >= 0.0);
        REQUIRE(s.target_mm.x() <= screen.width_mm);
        REQUIRE(s.target_mm.y() <= 0.0);
        REQUIRE(s.target_mm.y() >= -screen.height_mm);
        const auto cx = std::min<std::size_t>(9, static_cast<std::size_t>(10.0 * s.target_mm.x() / screen.width_mm));
        const auto cy = std::min<std::size_t>(9, static_cast<std::size_t>(-10.0 * s.target_mm.y() / screen.height_mm));
        counts[cy * 10 + cx] += 1.0;
    }
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - n / 100.0) * (c - n / 100.0) / (n / 100.0);
    MESSAGE("chi2 = " << chi2);
    CHECK(chi2 < critical);
}

TEST_CASE("one scene seen by every rig camera") {
    const ScreenPlane screen;
    const auto cams = rig_cameras(default_camera(), screen);
    REQUIRE(cams.size() == 4);
    const auto suite = multi_camera_suite(SceneSpec{}, cams[1], cams, screen, 20, 8);
    REQUIRE(suite.size() == 4);
    for (std::size_t i = 0; i < 20; ++i) {
        const GazeLabel& ref = suite[0].samples[i].label;
        const Eigen::Vector3d head = camera_to_screen(ref.o, cams[0]);
        for (std::size_t c = 1; c < 4; ++c) {
            const GazeLabel& l = suite[c].samples[i].label;
            CHECK((l.o - screen_to_camera(head, cams[c])).norm() < 1e-9);
            CHECK((direction_to_screen(l.r, cams[c]) - direction_to_screen(ref.r, cams[0])).norm() < 1e-12);
            CHECK((l.pog_mm - ref.pog_mm).norm() < 1e-9);
            CHECK((l.pog_px - ref.pog_px).norm() < 1e-9);
            CHECK(l.camera == c);
        }
    }
}

TEST_CASE("scene spec validation") {
    SceneSpec s;
    s.head_radius_min = 0.0;
    CHECK_THROWS(s.validate());
    s = SceneSpec{};
    s.eye_size = 0.0;
    CHECK_THROWS(s.validate());
    s = SceneSpec{};
    s.head_min.z() = 900.0;
    CHECK_THROWS(s.validate());
}

}  // TEST_SUITE
