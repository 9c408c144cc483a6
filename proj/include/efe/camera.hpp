#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>

#include "efe/image.hpp"

namespace efe {

class CameraError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Pinhole camera without distortion. `extrinsics` maps camera coordinates
/// (x right, y down, z forward, mm) to screen coordinates (mm).
struct CameraModel {
    std::string id = "default";
    double fx = 50.0;
    double fy = 50.0;
    double cx = 31.5;
    double cy = 17.5;
    std::size_t width = 64;
    std::size_t height = 36;
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();

    Eigen::Matrix3d K() const;
    Eigen::Matrix3d rotation() const { return extrinsics.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return extrinsics.topRightCorner<3, 1>(); }

    /// Throws CameraError unless fx, fy > 0 and the rotation block is
    /// orthonormal with determinant +1 (tolerance 1e-9).
    void validate() const;
};

/// Builds a camera-to-screen transform for a camera at `position` (screen
/// coordinates) whose optical axis points at `target`, with image rows
/// running opposite to the screen's y axis.
Eigen::Matrix4d look_at_extrinsics(const Eigen::Vector3d& position, const Eigen::Vector3d& target);

/// The display plane: z = 0 of the screen coordinate system, normal (0,0,1)
/// toward the user, anchor (0,0,0). Screen x runs right and y runs up as
/// seen by the user; the origin is at `origin_px` in display pixels, and
/// pixel rows grow downward.
struct ScreenPlane {
    double width_mm = 520.0;
    double height_mm = 320.0;
    std::size_t width_px = 1920;
    std::size_t height_px = 1080;
    Eigen::Vector2d origin_px = Eigen::Vector2d::Zero();

    double px_per_mm_x() const { return static_cast<double>(width_px) / width_mm; }
    double px_per_mm_y() const { return static_cast<double>(height_px) / height_mm; }
    double diagonal_px() const;
    double diagonal_mm() const;

    static Eigen::Vector3d normal() { return {0.0, 0.0, 1.0}; }
    static Eigen::Vector3d anchor() { return Eigen::Vector3d::Zero(); }

    void validate() const;
};

Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraModel& cam);

/// Pixel + depth to camera-space point. Throws CameraError for z <= 0.
Eigen::Vector3d unproject(const Eigen::Vector2d& g, double z, const CameraModel& cam);

Eigen::Vector3d camera_to_screen(const Eigen::Vector3d& p, const CameraModel& cam);
Eigen::Vector3d screen_to_camera(const Eigen::Vector3d& p, const CameraModel& cam);

/// Rotates a direction from camera to screen coordinates (no translation).
Eigen::Vector3d direction_to_screen(const Eigen::Vector3d& r, const CameraModel& cam);
Eigen::Vector3d direction_to_camera(const Eigen::Vector3d& r, const CameraModel& cam);

/// Screen-plane point (mm, screen x/y) to display pixels, and back.
Eigen::Vector2d pog_mm_to_px(const Eigen::Vector2d& mm, const ScreenPlane& screen);
Eigen::Vector2d pog_px_to_mm(const Eigen::Vector2d& px, const ScreenPlane& screen);

/// Homography taking source pixels to virtual-camera pixels for two cameras
/// sharing a center: K_virt * R * K_src^-1.
Eigen::Matrix3d virtual_homography(const CameraModel& src, const CameraModel& virt);

/// Warps `img` into the virtual camera with bilinear sampling. Pixels that
/// map outside the source are black. Throws CameraError when the camera
/// centers differ by more than 1e-6 mm.
Image reproject_to_virtual(const Image& img, const CameraModel& src, const CameraModel& virt);

/// Inverse-maps every output pixel through `h_inv` (output px -> input px).
Image warp_homography(const Image& img, const Eigen::Matrix3d& h_inv, std::size_t out_h,
                      std::size_t out_w);

}  // namespace efe
