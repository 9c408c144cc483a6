#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "efe/camera.hpp"
#include "efe/tensor.hpp"

namespace efe {

/// Pitch/yaw in radians. (0, 0) looks along camera -z, i.e. from the user
/// toward the camera; yaw turns toward +x, pitch toward +y.
struct SphericalDir {
    double pitch = 0.0;
    double yaw = 0.0;
};

/// Gaze ray in camera coordinates (mm); direction is a unit vector.
struct GazeRay {
    Eigen::Vector3d origin;
    Eigen::Vector3d direction;
};

/// Intersection of a gaze ray with the screen plane.
struct PointOfGaze {
    Eigen::Vector2d mm;   // screen x/y
    Eigen::Vector2d px;   // display pixels
    double lambda = 0.0;  // distance along the (screen-frame) direction
};

class GeometryError : public std::runtime_error {
public:
    enum class Kind { ZeroVector, ParallelToScreen, BehindScreen };

    GeometryError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

Eigen::Vector3d spherical_to_vector(const SphericalDir& s);
SphericalDir vector_to_spherical(const Eigen::Vector3d& v);

/// Angle between two non-zero vectors, in [0, pi].
double angular_error(const Eigen::Vector3d& r, const Eigen::Vector3d& r_hat);

/// Distance along `direction` from `origin` to the plane z = 0, both in
/// screen coordinates: lambda = ((a_s - o) . n_s) / (r . n_s).
double ray_plane_lambda(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

/// Intersects a camera-frame gaze ray with the screen. Throws
/// GeometryError for rays parallel to the screen (|r . n_s| < 1e-12) and
/// for intersections at lambda <= 0.
PointOfGaze intersect_screen(const GazeRay& ray, const CameraModel& cam, const ScreenPlane& screen);

// ---------------------------------------------------------------------------
// Batched, differentiable counterparts. Rows index samples.

/// N x 2 (pitch, yaw) -> N x 3 unit vectors.
Tensor spherical_to_vector(const Tensor& angles);

/// N x 3, N x 3 -> N angles in radians.
Tensor angular_error(const Tensor& r, const Tensor& r_hat);

/// N x 2 pixels, N depths -> N x 3 camera-frame points.
Tensor unproject(const Tensor& g, const Tensor& z, const CameraModel& cam);

/// N x 3 camera-frame points -> N x 2 pixels.
Tensor project(const Tensor& points, const CameraModel& cam);

struct PogBatch {
    Tensor mm;                        // N x 2, zero rows where invalid
    Tensor px;                        // N x 2
    std::vector<std::uint8_t> valid;  // 0 for parallel or behind-screen rays
};

/// Differentiable ray/screen intersection for camera-frame origins and
/// directions. Invalid rows are masked: their outputs and gradients are 0.
PogBatch intersect_screen(const Tensor& origin, const Tensor& direction, const CameraModel& cam,
                          const ScreenPlane& screen);

}  // namespace efe
