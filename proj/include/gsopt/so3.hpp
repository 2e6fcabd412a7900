#pragma once

#include "gsopt/common.hpp"

namespace gsopt {

/// Rotation matrix from a unit quaternion (w, x, y, z).
Mat3 quat_to_rotmat(const Vec4& q_unit);

/// Rotation matrix from a raw (not necessarily unit) quaternion;
/// the quaternion is normalized internally.
Mat3 quat_to_rotmat_raw(const Vec4& q_raw);

/// Chain rule through R(q/|q|): maps dL/dR to dL/dq_raw.
Vec4 rotmat_backward(const Vec4& q_raw, const Mat3& dL_dR);

/// Unit quaternion (w, x, y, z) from a proper rotation matrix.
Vec4 rotmat_to_quat(const Mat3& r);

} // namespace gsopt
