#include "efe/gaze_geom.hpp"

#include <algorithm>
#include <cmath>

namespace efe {

namespace {
constexpr double kParallelEps = 1e-12;
}

Eigen::Vector3d spherical_to_vector(const SphericalDir& s) {
    const double cp = std::cos(s.pitch);
    return {cp * std::sin(s.yaw), std::sin(s.pitch), -cp * std::cos(s.yaw)};
}

SphericalDir vector_to_spherical(const Eigen::Vector3d& v) {
    const double n = v.norm();
    if (!(n > 0.0)) throw GeometryError(GeometryError::Kind::ZeroVector, "vector_to_spherical: zero vector");
    const Eigen::Vector3d u = v / n;
    return {std::asin(std::clamp(u.y(), -1.0, 1.0)), std::atan2(u.x(), -u.z())};
}

double angular_error(const Eigen::Vector3d& r, const Eigen::Vector3d& r_hat) {
    const double nr = r.norm(), nh = r_hat.norm();
    if (!(nr > 0.0) || !(nh > 0.0)) {
        throw GeometryError(GeometryError::Kind::ZeroVector, "angular_error: zero-norm input");
    }
    return std::acos(std::clamp(r.dot(r_hat) / (nr * nh), -1.0, 1.0));
}

double ray_plane_lambda(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) {
    const Eigen::Vector3d n = ScreenPlane::normal();
    const double den = direction.dot(n);
    if (std::abs(den) < kParallelEps) {
        throw GeometryError(GeometryError::Kind::ParallelToScreen, "gaze ray is parallel to the screen");
    }
    return (ScreenPlane::anchor() - origin).dot(n) / den;
}

PointOfGaze intersect_screen(const GazeRay& ray, const CameraModel& cam, const ScreenPlane& screen) {
    const Eigen::Vector3d o = camera_to_screen(ray.origin, cam);
    const Eigen::Vector3d r = direction_to_screen(ray.direction, cam);
    const double lambda = ray_plane_lambda(o, r);
    if (!(lambda > 0.0)) {
        throw GeometryError(GeometryError::Kind::BehindScreen, "gaze ray points away from the screen");
    }
    const Eigen::Vector3d p = o + lambda * r;
    PointOfGaze pog;
    pog.mm = p.head<2>();
    pog.px = pog_mm_to_px(pog.mm, screen);
    pog.lambda = lambda;
    return pog;
}

// ---------------------------------------------------------------------------

namespace {

Tensor column(const Tensor& t, std::size_t i) { return select_last(t, i); }

Tensor stack3(const Tensor& a, const Tensor& b, const Tensor& c) {
    const Tensor parts[] = {a, b, c};
    return stack_last(parts);
}

Tensor stack2(const Tensor& a, const Tensor& b) {
    const Tensor parts[] = {a, b};
    return stack_last(parts);
}

void require_rows(const char* op, const Tensor& t, std::size_t cols) {
    if (t.rank() != 2 || t.dim(1) != cols) {
        throw ShapeError(std::string(op) + ": expected N x " + std::to_string(cols) + ", got " +
                         shape_str(t.shape()));
    }
}

Tensor constant_matrix(const Eigen::Matrix3d& m) {
    std::vector<double> v(9);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(r * 3 + c)] = m(r, c);
    }
    return Tensor({3, 3}, std::move(v));
}

}  // namespace

Tensor spherical_to_vector(const Tensor& angles) {
    require_rows("spherical_to_vector", angles, 2);
    const Tensor pitch = column(angles, 0);
    const Tensor yaw = column(angles, 1);
    const Tensor cp = cos(pitch);
    return stack3(mul(cp, sin(yaw)), sin(pitch), neg(mul(cp, cos(yaw))));
}

Tensor angular_error(const Tensor& r, const Tensor& r_hat) {
    require_rows("angular_error", r, 3);
    if (r.shape() != r_hat.shape()) {
        throw ShapeError("angular_error: shape mismatch " + shape_str(r.shape()) + " vs " +
                         shape_str(r_hat.shape()));
    }
    const Tensor nr = sqrt(dot_last(r, r));
    const Tensor nh = sqrt(dot_last(r_hat, r_hat));
    for (std::size_t i = 0; i < nr.numel(); ++i) {
        if (!(nr[i] > 0.0) || !(nh[i] > 0.0)) {
            throw GeometryError(GeometryError::Kind::ZeroVector, "angular_error: zero-norm input");
        }
    }
    return acos(div(dot_last(r, r_hat), mul(nr, nh)));
}

Tensor unproject(const Tensor& g, const Tensor& z, const CameraModel& cam) {
    require_rows("unproject", g, 2);
    if (z.rank() != 1 || z.dim(0) != g.dim(0)) {
        throw ShapeError("unproject: depth shape " + shape_str(z.shape()) + " does not match " +
                         shape_str(g.shape()));
    }
    const Tensor x = mul(scale(add_scalar(column(g, 0), -cam.cx), 1.0 / cam.fx), z);
    const Tensor y = mul(scale(add_scalar(column(g, 1), -cam.cy), 1.0 / cam.fy), z);
    return stack3(x, y, z);
}

Tensor project(const Tensor& points, const CameraModel& cam) {
    require_rows("project", points, 3);
    const Tensor z = column(points, 2);
    const Tensor u = add_scalar(scale(div(column(points, 0), z), cam.fx), cam.cx);
    const Tensor v = add_scalar(scale(div(column(points, 1), z), cam.fy), cam.cy);
    return stack2(u, v);
}

PogBatch intersect_screen(const Tensor& origin, const Tensor& direction, const CameraModel& cam,
                          const ScreenPlane& screen) {
    require_rows("intersect_screen", origin, 3);
    require_rows("intersect_screen", direction, 3);
    if (origin.dim(0) != direction.dim(0)) {
        throw ShapeError("intersect_screen: shape mismatch " + shape_str(origin.shape()) + " vs " +
                         shape_str(direction.shape()));
    }
    const std::size_t n = origin.dim(0);
    const Tensor rt = constant_matrix(cam.rotation().transpose());
    const Eigen::Vector3d t = cam.translation();
    const Tensor o = add(matmul(origin, rt), Tensor({3}, {t.x(), t.y(), t.z()}));
    const Tensor r = matmul(direction, rt);

    // lambda = ((a_s - o) . n_s) / (r . n_s) with a_s = 0, n_s = (0, 0, 1).
    const Tensor num = neg(column(o, 2));
    const Tensor den = column(r, 2);

    PogBatch out;
    out.valid.assign(n, 0);
    std::vector<double> mask(n, 0.0), fill(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const bool ok = std::abs(den[i]) >= kParallelEps && num[i] / den[i] > 0.0;
        out.valid[i] = ok ? 1 : 0;
        mask[i] = ok ? 1.0 : 0.0;
        fill[i] = ok ? 0.0 : 1.0;
    }
    const Tensor m({n}, mask);
    const Tensor safe_den = add(mul(den, m), Tensor({n}, fill));
    const Tensor lambda = mul(div(num, safe_den), m);
    const Tensor lam2 = reshape(lambda, {n, 1});
    const Tensor m2({n, 1}, mask);

    const Tensor oxy = stack2(column(o, 0), column(o, 1));
    const Tensor rxy = stack2(column(r, 0), column(r, 1));
    out.mm = mul(add(oxy, mul(lam2, rxy)), m2);
    const Tensor px_scale({2}, {screen.px_per_mm_x(), -screen.px_per_mm_y()});
    const Tensor px_origin({2}, {screen.origin_px.x(), screen.origin_px.y()});
    out.px = mul(add(mul(out.mm, px_scale), px_origin), m2);
    return out;
}

}  // namespace efe
