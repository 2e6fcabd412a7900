#pragma once

#include "gsopt/common.hpp"

#include <array>

namespace gsopt {

/// Pinhole view with a rigid world-to-camera transform.
/// Conventions: right-handed world, y up, cameras look at the origin.
/// Camera frame: +x image-right, +y image-down, +z forward; depth is
/// camera-space z. Pixel (i, j) samples at (i + 0.5, j + 0.5), row 0 on top.
struct CameraView {
    Mat4 world_to_camera = Mat4::Identity();
    double fov_y_deg = 50.0;
    int width = 64;
    int height = 64;
    double near = 0.01;
    double far = 100.0;

    double focal() const;          // pixels, shared by both axes
    Vec2 principal_point() const;  // (cx, cy) = (W/2, H/2)
    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 position() const;         // camera center in world space
    Vec3 to_camera(const Vec3& p_world) const;
};

struct Projection {
    Vec2 pixel = Vec2::Zero();
    double depth = 0.0;
    bool visible = false;
};

/// Projects a world point; points outside (near, far) are flagged invisible.
Projection project(const CameraView& view, const Vec3& point);

CameraView make_look_at(const Vec3& position, const Vec3& target, const Vec3& up,
                        double fov_y_deg, int width, int height,
                        double near = 0.01, double far = 100.0);

/// Orbit position around the origin; azimuth 0 on +x, rotating toward +z,
/// elevation measured up from the horizontal plane. Degrees.
Vec3 orbit_position(double azimuth_deg, double elevation_deg, double distance);

CameraView make_orbit_camera(double azimuth_deg, double elevation_deg, double distance,
                             double fov_y_deg, int width, int height,
                             double near = 0.01, double far = 100.0);

/// Rigid transform mapping the reference camera frame onto the other:
/// relative = other.world_to_camera * inverse(reference.world_to_camera),
/// so relative_pose(v, v) is the identity.
Mat4 relative_pose(const CameraView& reference, const CameraView& other);

/// Four views at azimuths start + {0, 90, 180, 270}, shared elevation,
/// distance, and intrinsics. View 0 is the reference/condition view.
struct CanonicalRig {
    std::array<CameraView, 4> views;
    double start_azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double distance = 1.5;

    /// Poses of all four views relative to view 0 (view 0 maps to identity).
    std::array<Mat4, 4> relative_poses() const;
};

CanonicalRig make_canonical_rig(double start_azimuth_deg, double elevation_deg,
                                double distance, double fov_y_deg, int width, int height,
                                double near = 0.01, double far = 100.0);

/// Sampling ranges for random training views (degrees / world units).
struct CameraSampleRanges {
    double distance_min = 1.4, distance_max = 1.6;
    double fov_min = 40.0, fov_max = 60.0;
    double elevation_min = 0.0, elevation_max = 30.0;
    double azimuth_min = 0.0, azimuth_max = 360.0;
};

/// Draws distance, fov, elevation, azimuth in that fixed order.
CameraView sample_random_camera(Rng& rng, const CameraSampleRanges& ranges,
                                int width, int height,
                                double near = 0.01, double far = 100.0);

} // namespace gsopt
