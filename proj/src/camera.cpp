#include "gsopt/camera.hpp"

#include <cmath>

namespace gsopt {

namespace {
constexpr double kPi = 3.14159265358979323846;
double deg2rad(double d) { return d * kPi / 180.0; }
} // namespace

double CameraView::focal() const {
    return (height / 2.0) / std::tan(deg2rad(fov_y_deg) / 2.0);
}

Vec2 CameraView::principal_point() const {
    return Vec2(width / 2.0, height / 2.0);
}

Vec3 CameraView::position() const {
    const Mat3 r = rotation();
    return -(r.transpose() * translation());
}

Vec3 CameraView::to_camera(const Vec3& p) const {
    return rotation() * p + translation();
}

Projection project(const CameraView& view, const Vec3& point) {
    Projection out;
    const Vec3 pc = view.to_camera(point);
    out.depth = pc.z();
    if (pc.z() <= view.near || pc.z() >= view.far) return out;
    const double f = view.focal();
    const Vec2 c = view.principal_point();
    out.pixel = Vec2(c.x() + f * pc.x() / pc.z(), c.y() + f * pc.y() / pc.z());
    out.visible = true;
    return out;
}

CameraView make_look_at(const Vec3& position, const Vec3& target, const Vec3& up,
                        double fov_y_deg, int width, int height,
                        double near, double far) {
    require(width > 0 && height > 0, "make_look_at: non-positive resolution");
    require(fov_y_deg > 0.0 && fov_y_deg < 180.0, "make_look_at: fov outside (0, 180)");
    const Vec3 forward = (target - position).normalized();
    Vec3 right = forward.cross(up);
    require(right.norm() > 1e-12, "make_look_at: view direction parallel to up");
    right.normalize();
    const Vec3 down = forward.cross(right).normalized();

    CameraView v;
    v.fov_y_deg = fov_y_deg;
    v.width = width;
    v.height = height;
    v.near = near;
    v.far = far;
    Mat3 r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = forward;
    v.world_to_camera.setIdentity();
    v.world_to_camera.topLeftCorner<3, 3>() = r;
    v.world_to_camera.topRightCorner<3, 1>() = -(r * position);
    return v;
}

Vec3 orbit_position(double azimuth_deg, double elevation_deg, double distance) {
    const double az = deg2rad(azimuth_deg);
    const double el = deg2rad(elevation_deg);
    return distance * Vec3(std::cos(el) * std::cos(az), std::sin(el),
                           std::cos(el) * std::sin(az));
}

CameraView make_orbit_camera(double azimuth_deg, double elevation_deg, double distance,
                             double fov_y_deg, int width, int height,
                             double near, double far) {
    return make_look_at(orbit_position(azimuth_deg, elevation_deg, distance),
                        Vec3::Zero(), Vec3(0, 1, 0), fov_y_deg, width, height, near, far);
}

Mat4 relative_pose(const CameraView& reference, const CameraView& other) {
    const Mat3 r = reference.rotation();
    const Vec3 t = reference.translation();
    Mat4 ref_inv = Mat4::Identity();
    ref_inv.topLeftCorner<3, 3>() = r.transpose();
    ref_inv.topRightCorner<3, 1>() = -(r.transpose() * t);
    return other.world_to_camera * ref_inv;
}

std::array<Mat4, 4> CanonicalRig::relative_poses() const {
    std::array<Mat4, 4> out;
    for (int i = 0; i < 4; ++i) out[i] = relative_pose(views[0], views[i]);
    return out;
}

CanonicalRig make_canonical_rig(double start_azimuth_deg, double elevation_deg,
                                double distance, double fov_y_deg, int width, int height,
                                double near, double far) {
    CanonicalRig rig;
    rig.start_azimuth_deg = start_azimuth_deg;
    rig.elevation_deg = elevation_deg;
    rig.distance = distance;
    for (int i = 0; i < 4; ++i) {
        rig.views[i] = make_orbit_camera(start_azimuth_deg + 90.0 * i, elevation_deg,
                                         distance, fov_y_deg, width, height, near, far);
    }
    return rig;
}

CameraView sample_random_camera(Rng& rng, const CameraSampleRanges& ranges,
                                int width, int height, double near, double far) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double dist = ranges.distance_min + u(rng) * (ranges.distance_max - ranges.distance_min);
    const double fov = ranges.fov_min + u(rng) * (ranges.fov_max - ranges.fov_min);
    const double elev = ranges.elevation_min + u(rng) * (ranges.elevation_max - ranges.elevation_min);
    const double azim = ranges.azimuth_min + u(rng) * (ranges.azimuth_max - ranges.azimuth_min);
    return make_orbit_camera(azim, elev, dist, fov, width, height, near, far);
}

} // namespace gsopt
