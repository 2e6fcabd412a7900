#include "gsopt/so3.hpp"

#include <cmath>

namespace gsopt {

Mat3 quat_to_rotmat(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 quat_to_rotmat_raw(const Vec4& q_raw) {
    const double n = q_raw.norm();
    require(n > 0.0, "quaternion has zero norm");
    return quat_to_rotmat(q_raw / n);
}

Vec4 rotmat_backward(const Vec4& q_raw, const Mat3& g) {
    const double n = q_raw.norm();
    require(n > 0.0, "quaternion has zero norm");
    const Vec4 q = q_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];

    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
    dx << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
    dy << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
    dz << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;

    Vec4 g_unit;
    g_unit[0] = 2.0 * g.cwiseProduct(dw).sum();
    g_unit[1] = 2.0 * g.cwiseProduct(dx).sum();
    g_unit[2] = 2.0 * g.cwiseProduct(dy).sum();
    g_unit[3] = 2.0 * g.cwiseProduct(dz).sum();

    // Through the normalization q_hat = q / |q|.
    return (g_unit - q * q.dot(g_unit)) / n;
}

Vec4 rotmat_to_quat(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    return Vec4(q.w(), q.x(), q.y(), q.z());
}

} // namespace gsopt
