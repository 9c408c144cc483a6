#include "efe/camera.hpp"

#include <Eigen/LU>
#include <cmath>

namespace efe {

Eigen::Matrix3d CameraModel::K() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw CameraError("camera '" + id + "': focal lengths must be positive");
    }
    if (width == 0 || height == 0) throw CameraError("camera '" + id + "': empty image size");
    const Eigen::Matrix3d r = rotation();
    const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9 || std::abs(r.determinant() - 1.0) > 1e-9) {
        throw CameraError("camera '" + id + "': extrinsic rotation is not a proper rotation");
    }
    const Eigen::RowVector4d last = extrinsics.row(3);
    if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
        throw CameraError("camera '" + id + "': extrinsics bottom row must be (0,0,0,1)");
    }
}

Eigen::Matrix4d look_at_extrinsics(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
    const Eigen::Vector3d z = (target - position).normalized();
    // Image x runs toward the screen's -x when the camera faces the user.
    Eigen::Vector3d x = Eigen::Vector3d(-1.0, 0.0, 0.0);
    x = (x - x.dot(z) * z).normalized();
    const Eigen::Vector3d y = z.cross(x);
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    t.block<3, 1>(0, 0) = x;
    t.block<3, 1>(0, 1) = y;
    t.block<3, 1>(0, 2) = z;
    t.block<3, 1>(0, 3) = position;
    return t;
}

double ScreenPlane::diagonal_px() const {
    return std::hypot(static_cast<double>(width_px), static_cast<double>(height_px));
}

double ScreenPlane::diagonal_mm() const { return std::hypot(width_mm, height_mm); }

void ScreenPlane::validate() const {
    if (!(width_mm > 0.0) || !(height_mm > 0.0) || width_px == 0 || height_px == 0) {
        throw CameraError("screen: all dimensions must be positive");
    }
    if (!std::isfinite(px_per_mm_x()) || !std::isfinite(px_per_mm_y())) {
        throw CameraError("screen: pixel density is not finite");
    }
}

Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraModel& cam) {
    if (!(p.z() > 0.0)) throw CameraError("project: point must lie in front of the camera");
    return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

Eigen::Vector3d unproject(const Eigen::Vector2d& g, double z, const CameraModel& cam) {
    if (!(z > 0.0)) throw CameraError("unproject: depth must be positive");
    return {(g.x() - cam.cx) * z / cam.fx, (g.y() - cam.cy) * z / cam.fy, z};
}

Eigen::Vector3d camera_to_screen(const Eigen::Vector3d& p, const CameraModel& cam) {
    return cam.rotation() * p + cam.translation();
}

Eigen::Vector3d screen_to_camera(const Eigen::Vector3d& p, const CameraModel& cam) {
    return cam.rotation().transpose() * (p - cam.translation());
}

Eigen::Vector3d direction_to_screen(const Eigen::Vector3d& r, const CameraModel& cam) {
    return cam.rotation() * r;
}

Eigen::Vector3d direction_to_camera(const Eigen::Vector3d& r, const CameraModel& cam) {
    return cam.rotation().transpose() * r;
}

Eigen::Vector2d pog_mm_to_px(const Eigen::Vector2d& mm, const ScreenPlane& screen) {
    return {screen.origin_px.x() + mm.x() * screen.px_per_mm_x(),
            screen.origin_px.y() - mm.y() * screen.px_per_mm_y()};
}

Eigen::Vector2d pog_px_to_mm(const Eigen::Vector2d& px, const ScreenPlane& screen) {
    return {(px.x() - screen.origin_px.x()) / screen.px_per_mm_x(),
            (screen.origin_px.y() - px.y()) / screen.px_per_mm_y()};
}

Eigen::Matrix3d virtual_homography(const CameraModel& src, const CameraModel& virt) {
    if ((src.translation() - virt.translation()).norm() > 1e-6) {
        throw CameraError("reproject: cameras '" + src.id + "' and '" + virt.id +
                          "' have different centers; re-projection needs depth");
    }
    // Source camera coordinates expressed in the virtual camera frame.
    const Eigen::Matrix3d r = virt.rotation().transpose() * src.rotation();
    return virt.K() * r * src.K().inverse();
}

Image warp_homography(const Image& img, const Eigen::Matrix3d& h_inv, std::size_t out_h,
                      std::size_t out_w) {
    Image out(img.channels, out_h, out_w, 0.0f);
    const auto w = static_cast<long>(img.width);
    const auto h = static_cast<long>(img.height);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const Eigen::Vector3d s = h_inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
            if (!(s.z() > 0.0)) continue;
            const double u = s.x() / s.z();
            const double v = s.y() / s.z();
            if (!(u > -1.0 && v > -1.0 && u < static_cast<double>(w) && v < static_cast<double>(h))) continue;
            const double fu = std::floor(u), fv = std::floor(v);
            const long x0 = static_cast<long>(fu), y0 = static_cast<long>(fv);
            const double ax = u - fu, ay = v - fv;
            for (std::size_t c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                const double weights[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
                const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
                const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
                for (int k = 0; k < 4; ++k) {
                    if (weights[k] == 0.0) continue;
                    if (xs[k] < 0 || ys[k] < 0 || xs[k] >= w || ys[k] >= h) continue;
                    acc += weights[k] * img.at(c, static_cast<std::size_t>(ys[k]), static_cast<std::size_t>(xs[k]));
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Image reproject_to_virtual(const Image& img, const CameraModel& src, const CameraModel& virt) {
    if (img.width != src.width || img.height != src.height) {
        throw CameraError("reproject: image size does not match camera '" + src.id + "'");
    }
    Eigen::Matrix3d h = virtual_homography(src, virt);
    // Round-off in K * K^-1 must not perturb an identity warp.
    if ((h - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12) h.setIdentity();
    return warp_homography(img, h.inverse(), virt.height, virt.width);
}

}  // namespace efe
