#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "efe/camera.hpp"
#include "efe/image.hpp"
#include "efe/rng.hpp"

namespace efe {

/// Scene distribution for the generator. Head positions are drawn in the
/// camera frame, gaze targets on the screen (screen x/y, mm).
struct SceneSpec {
    Eigen::Vector3d head_min{-100.0, -50.0, 400.0};
    Eigen::Vector3d head_max{100.0, 50.0, 800.0};
    double head_radius_min = 80.0;
    double head_radius_max = 90.0;
    /// Target rectangle on the screen; empty (min == max) means the whole screen.
    Eigen::Vector2d target_min{0.0, 0.0};
    Eigen::Vector2d target_max{0.0, 0.0};
    /// Eye-dot displacement per radian of (yaw, pitch), in head radii.
    double eye_gain = 0.8;
    /// Horizontal eye offset from the head center, in head radii.
    double eye_spacing = 0.3;
    /// Eye-dot Gaussian sigma, in head radii (at least half a pixel).
    double eye_size = 0.25;
    double ambient = 0.25;
    double noise_sigma = 2.0 / 255.0;
    std::uint32_t max_retries = 1000;

    void validate() const;
};

struct GazeLabel {
    Eigen::Vector2d g = Eigen::Vector2d::Zero();  // origin pixel
    double z = 0.0;                               // origin depth (mm)
    Eigen::Vector3d o = Eigen::Vector3d::Zero();  // origin, camera frame (mm)
    Eigen::Vector3d r = Eigen::Vector3d::Zero();  // unit direction, camera frame
    Eigen::Vector2d pog_px = Eigen::Vector2d::Zero();
    Eigen::Vector2d pog_mm = Eigen::Vector2d::Zero();
    std::uint32_t camera = 0;
};

struct GazeSample {
    Image frame;
    GazeLabel label;
};

/// A drawn scene in screen coordinates, independent of any camera.
struct Scene {
    Eigen::Vector3d head_screen = Eigen::Vector3d::Zero();
    double head_radius = 0.0;
    Eigen::Vector2d target_mm = Eigen::Vector2d::Zero();
};

/// Labels for `scene` seen from `cam`, computed with the camera and
/// geometry modules.
GazeLabel label_scene(const Scene& scene, const CameraModel& cam, const ScreenPlane& screen,
                      std::uint32_t camera_index);

/// Rasterizes a labeled scene: shaded head disc of radius fx * R / z at g,
/// two eye dots displaced by eye_gain * radius * (yaw, pitch), then
/// Gaussian pixel noise drawn from `noise_rng`.
Image render_scene(const Scene& scene, const GazeLabel& label, const CameraModel& cam, const SceneSpec& spec,
                   Rng& noise_rng);

/// True when the head disc projects fully inside the frame of `cam`.
bool scene_visible(const Scene& scene, const CameraModel& cam);

/// Draws a scene with the head box taken in `reference`'s frame, retrying
/// until the head is visible in every camera of `cams`.
Scene draw_scene(const SceneSpec& spec, const CameraModel& reference, const std::vector<CameraModel>& cams,
                 const ScreenPlane& screen, Rng& rng);

GazeSample render_sample(const SceneSpec& spec, const CameraModel& cam, const ScreenPlane& screen, Rng& rng);

/// In-memory dataset for one camera.
struct Dataset {
    CameraModel camera;
    ScreenPlane screen;
    std::uint64_t seed = 0;
    std::uint32_t camera_index = 0;
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<GazeSample> samples;

    std::size_t size() const { return samples.size(); }
};

// Dataset file layout (little-endian):
//   magic     8 bytes "EFEDSET1"
//   version   u32 (= 1)
//   count     u64
//   C, H, W   u32 x 3
//   seed      u64
//   camera    id (u32 length + bytes), camera index u32, fx fy cx cy f64,
//             width height u32, extrinsics f64 x 16 (row-major)
//   screen    width_mm height_mm f64, width_px height_px u32, origin_px f64 x 2
//   index     u64 x count: byte offset of each record from file start
//   records   image f32 x C*H*W (planar), then labels f64 x 13
//             (g.x g.y z o.x o.y o.z r.x r.y r.z pog_px.x pog_px.y
//             pog_mm.x pog_mm.y), then camera index u32
inline constexpr std::uint32_t kDatasetVersion = 1;

/// Renders n samples; sample i uses seed stream derive_seed(seed, i), so
/// output does not depend on generation order. Throws for n == 0.
Dataset generate_dataset(const SceneSpec& spec, const CameraModel& cam, const ScreenPlane& screen, std::size_t n,
                         std::uint64_t seed, std::uint32_t camera_index = 0);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Half-open [begin, end) index ranges for train / val / test.
struct SplitRanges {
    std::array<std::size_t, 2> train{0, 0};
    std::array<std::size_t, 2> val{0, 0};
    std::array<std::size_t, 2> test{0, 0};
};

/// Contiguous split by index; the test split takes whatever train and val
/// leave.
SplitRanges split_ranges(std::size_t n, double train_fraction, double val_fraction);

/// Subset [begin, end) of a dataset.
Dataset slice_dataset(const Dataset& ds, std::size_t begin, std::size_t end);

// ---------------------------------------------------------------------------
// Four-camera desk rig: below the display, above its center, above-left and
// above-right, all aimed at a nominal head position in front of the screen.

inline constexpr std::array<const char*, 4> kRigCameraIds{"MVC", "W_C", "W_L", "W_R"};

std::vector<CameraModel> rig_cameras(const CameraModel& intrinsics, const ScreenPlane& screen);

/// The default single camera (above the display center).
CameraModel default_camera();

/// Renders the same scenes from every camera; datasets[c][i] shows scene i.
/// Head boxes are taken in `reference`'s frame.
std::vector<Dataset> multi_camera_suite(const SceneSpec& spec, const CameraModel& reference,
                                        const std::vector<CameraModel>& cams, const ScreenPlane& screen,
                                        std::size_t n, std::uint64_t seed);

}  // namespace efe
