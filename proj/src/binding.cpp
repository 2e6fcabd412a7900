#include "gsopt/binding.hpp"

#include <algorithm>
#include <cmath>

namespace gsopt {

namespace {

/// Smooth minimum via the degree-8 power mean: (a^-8 + b^-8)^(-1/8).
double smoothmin8(double a, double b) {
    const double pa = std::pow(a, -8.0);
    const double pb = std::pow(b, -8.0);
    return std::pow(pa + pb, -0.125);
}

constexpr double kThicknessCap = 0.1;

/// Orthonormal face frame: t1 along the first edge, n the face normal,
/// t2 = n x t1 completing a right-handed basis.
struct FaceFrame {
    Vec3 e1, e2;   // edge vectors
    Vec3 m;        // unnormalized normal e1 x e2
    double l1, lm; // norms of e1 and m
    Vec3 t1, t2, n;
};

FaceFrame face_frame(const TriMesh& mesh, int face) {
    const Eigen::Vector3i& f = mesh.faces[face];
    FaceFrame fr;
    fr.e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
    fr.e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
    fr.m = fr.e1.cross(fr.e2);
    fr.l1 = fr.e1.norm();
    fr.lm = fr.m.norm();
    require(fr.l1 > 0.0 && fr.lm > 0.0, "face_frame: degenerate face");
    fr.t1 = fr.e1 / fr.l1;
    fr.n = fr.m / fr.lm;
    fr.t2 = fr.n.cross(fr.t1);
    return fr;
}

} // namespace

void BoundGrads::resize(std::size_t n_gaussians, std::size_t n_vertices) {
    d_rot.resize(n_gaussians, Vec2::Zero());
    d_log_scale_2d.resize(n_gaussians, Vec2::Zero());
    d_thickness_logit.resize(n_gaussians, 0.0);
    d_opacity_logit.resize(n_gaussians, 0.0);
    d_color.resize(n_gaussians, Vec3::Zero());
    d_vertex.resize(n_vertices, Vec3::Zero());
}

void BoundGrads::zero() {
    std::fill(d_rot.begin(), d_rot.end(), Vec2::Zero());
    std::fill(d_log_scale_2d.begin(), d_log_scale_2d.end(), Vec2::Zero());
    std::fill(d_thickness_logit.begin(), d_thickness_logit.end(), 0.0);
    std::fill(d_opacity_logit.begin(), d_opacity_logit.end(), 0.0);
    std::fill(d_color.begin(), d_color.end(), Vec3::Zero());
    std::fill(d_vertex.begin(), d_vertex.end(), Vec3::Zero());
}

double BoundGaussianCloud::min_plane_scale(std::size_t i) const {
    return std::exp(log_scales_2d[i].minCoeff());
}

double BoundGaussianCloud::thickness(std::size_t i) const {
    const double s1 = std::exp(log_scales_2d[i][0]);
    const double s2 = std::exp(log_scales_2d[i][1]);
    return kThicknessCap * logistic(thickness_logits[i]) * smoothmin8(s1, s2);
}

void BoundGaussianCloud::zero_grad() {
    grad.resize(size(), mesh.vertex_count());
    grad.zero();
}

void BoundGaussianCloud::validate() const {
    mesh.validate();
    const std::size_t n = size();
    require(barys.size() == n && rots.size() == n && log_scales_2d.size() == n &&
                thickness_logits.size() == n && opacity_logits.size() == n &&
                colors.size() == n,
            "BoundGaussianCloud: array size mismatch");
    const int nf = static_cast<int>(mesh.face_count());
    for (std::size_t i = 0; i < n; ++i) {
        require(faces[i] >= 0 && faces[i] < nf, "BoundGaussianCloud: face index out of range");
        // Tolerance covers float32 quantization from a file round-trip.
        require(barys[i].minCoeff() >= 0.0 && std::abs(barys[i].sum() - 1.0) < 1e-6,
                "BoundGaussianCloud: barycentric coordinates must be a convex combination");
        require(rots[i].norm() > 0.0, "BoundGaussianCloud: zero rotation");
    }
}

std::vector<Vec3> binding_pattern(int per_face) {
    const Vec3 c(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    const Vec3 m01(0.5, 0.5, 0.0), m12(0.0, 0.5, 0.5), m20(0.5, 0.0, 0.5);
    switch (per_face) {
    case 1:
        return {c};
    case 3:
        return {m01, m12, m20};
    case 6:
        return {m01, m12, m20, Vec3(2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0),
                Vec3(1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0), Vec3(1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0)};
    default:
        throw ContractError("binding_pattern: per_face must be 1, 3, or 6");
    }
}

BoundGaussianCloud bind_gaussians(const TriMesh& mesh, const BindOptions& options) {
    mesh.validate();
    require(mesh.face_count() > 0, "bind_gaussians: mesh has no faces");
    require(options.opacity > 0.0 && options.opacity < 1.0,
            "bind_gaussians: opacity must lie in (0,1)");
    const std::vector<Vec3> pattern = binding_pattern(options.per_face);
    const double opacity_logit = logit(options.opacity);

    BoundGaussianCloud cloud;
    cloud.mesh = mesh;
    const std::size_t n = mesh.face_count() * pattern.size();
    cloud.faces.reserve(n);
    cloud.barys.reserve(n);
    for (int f = 0; f < static_cast<int>(mesh.face_count()); ++f) {
        const double area = mesh.face_area(f);
        require(area > 0.0, "bind_gaussians: degenerate face");
        // One Gaussian's 1-sigma disk covers about its share of the face.
        const double s = std::max(std::sqrt(area / (pattern.size() * M_PI)), 1e-9);
        for (const Vec3& bary : pattern) {
            cloud.faces.push_back(f);
            cloud.barys.push_back(bary);
            cloud.rots.push_back(Vec2(1.0, 0.0));
            cloud.log_scales_2d.push_back(Vec2::Constant(std::log(s)));
            cloud.thickness_logits.push_back(0.0);
            cloud.opacity_logits.push_back(opacity_logit);
            if (mesh.colors.empty()) {
                cloud.colors.push_back(Vec3::Constant(0.5));
            } else {
                const Eigen::Vector3i& fv = mesh.faces[f];
                cloud.colors.push_back(bary[0] * mesh.colors[fv[0]] +
                                       bary[1] * mesh.colors[fv[1]] +
                                       bary[2] * mesh.colors[fv[2]]);
            }
        }
    }
    cloud.zero_grad();
    return cloud;
}

SplatArrays bound_to_splats(const BoundGaussianCloud& cloud) {
    const std::size_t n = cloud.size();
    SplatArrays splats;
    splats.centers.resize(n);
    splats.covariances.resize(n);
    splats.alphas.resize(n);
    splats.colors.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const FaceFrame fr = face_frame(cloud.mesh, cloud.faces[i]);
        const Vec2 rot = cloud.rots[i] / cloud.rots[i].norm();
        const Vec3 u1 = rot[0] * fr.t1 + rot[1] * fr.t2;
        const Vec3 u2 = -rot[1] * fr.t1 + rot[0] * fr.t2;
        Mat3 r;
        r.col(0) = u1;
        r.col(1) = u2;
        r.col(2) = fr.n;
        const double s1 = std::exp(cloud.log_scales_2d[i][0]);
        const double s2 = std::exp(cloud.log_scales_2d[i][1]);
        const double s3 = cloud.thickness(i);
        const Vec3 sq(s1 * s1, s2 * s2, s3 * s3);
        splats.centers[i] = cloud.center(i);
        splats.covariances[i] = r * sq.asDiagonal() * r.transpose();
        splats.alphas[i] = cloud.alpha(i);
        splats.colors[i] = cloud.colors[i];
    }
    return splats;
}

void chain_splat_grads_to_bound(const SplatGrads& sg, BoundGaussianCloud& cloud) {
    const std::size_t n = cloud.size();
    require(sg.size() == n, "chain_splat_grads_to_bound: gradient size mismatch");
    cloud.grad.resize(n, cloud.mesh.vertex_count());
    for (std::size_t i = 0; i < n; ++i) {
        const int face = cloud.faces[i];
        const Eigen::Vector3i& fv = cloud.mesh.faces[face];
        const FaceFrame fr = face_frame(cloud.mesh, face);
        const double rot_norm = cloud.rots[i].norm();
        const Vec2 rot = cloud.rots[i] / rot_norm;
        const double c = rot[0], s = rot[1];
        const Vec3 u1 = c * fr.t1 + s * fr.t2;
        const Vec3 u2 = -s * fr.t1 + c * fr.t2;
        Mat3 r;
        r.col(0) = u1;
        r.col(1) = u2;
        r.col(2) = fr.n;

        const double s1 = std::exp(cloud.log_scales_2d[i][0]);
        const double s2 = std::exp(cloud.log_scales_2d[i][1]);
        const double sigt = logistic(cloud.thickness_logits[i]);
        const double sm = smoothmin8(s1, s2);
        const double s3 = kThicknessCap * sigt * sm;

        const Mat3 g3 = 0.5 * (sg.d_cov[i] + sg.d_cov[i].transpose());
        const Vec3 sq(s1 * s1, s2 * s2, s3 * s3);
        const Mat3 d_r = 2.0 * g3 * r * sq.asDiagonal();
        const Mat3 rt_g_r = r.transpose() * g3 * r;
        const double ds1 = 2.0 * s1 * rt_g_r(0, 0);
        const double ds2 = 2.0 * s2 * rt_g_r(1, 1);
        const double ds3 = 2.0 * s3 * rt_g_r(2, 2);

        // Thickness chain: s3 = cap * sigmoid(t) * sm(s1, s2) where
        // d sm / d s_k = (sm / s_k)^9.
        cloud.grad.d_thickness_logit[i] += ds3 * kThicknessCap * sigt * (1.0 - sigt) * sm;
        const double dsm = ds3 * kThicknessCap * sigt;
        const double ds1_total = ds1 + dsm * std::pow(sm / s1, 9.0);
        const double ds2_total = ds2 + dsm * std::pow(sm / s2, 9.0);
        cloud.grad.d_log_scale_2d[i][0] += ds1_total * s1;
        cloud.grad.d_log_scale_2d[i][1] += ds2_total * s2;

        // In-plane rotation and face frame chains.
        const Vec3 g1 = d_r.col(0), g2 = d_r.col(1);
        Vec3 d_n = d_r.col(2);
        const double dc = g1.dot(fr.t1) + g2.dot(fr.t2);
        const double ds = g1.dot(fr.t2) - g2.dot(fr.t1);
        const Vec2 d_rot_unit(dc, ds);
        cloud.grad.d_rot[i] += (d_rot_unit - rot * rot.dot(d_rot_unit)) / rot_norm;

        Vec3 d_t1 = c * g1 - s * g2;
        const Vec3 d_t2 = s * g1 + c * g2;
        // t2 = n x t1.
        d_n += fr.t1.cross(d_t2);
        d_t1 += d_t2.cross(fr.n);
        // t1 = e1 / |e1| and n = m / |m| with m = e1 x e2.
        Vec3 d_e1 = (d_t1 - fr.t1 * fr.t1.dot(d_t1)) / fr.l1;
        const Vec3 d_m = (d_n - fr.n * fr.n.dot(d_n)) / fr.lm;
        d_e1 += fr.e2.cross(d_m);
        const Vec3 d_e2 = d_m.cross(fr.e1);

        const Vec3& bary = cloud.barys[i];
        const Vec3& d_center = sg.d_center[i];
        cloud.grad.d_vertex[fv[0]] += bary[0] * d_center - d_e1 - d_e2;
        cloud.grad.d_vertex[fv[1]] += bary[1] * d_center + d_e1;
        cloud.grad.d_vertex[fv[2]] += bary[2] * d_center + d_e2;

        const double alpha = cloud.alpha(i);
        cloud.grad.d_opacity_logit[i] += sg.d_alpha[i] * alpha * (1.0 - alpha);
        cloud.grad.d_color[i] += sg.d_color[i];
    }
}

RenderOutput render_bound(const BoundGaussianCloud& cloud, const CameraView& view,
                          const Vec3& background, const RenderSettings& settings) {
    return render_splats(bound_to_splats(cloud), view, background, settings);
}

void render_bound_backward(BoundGaussianCloud& cloud, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings,
                           const RenderAdjoints& adjoints) {
    const SplatArrays splats = bound_to_splats(cloud);
    SplatGrads sg;
    sg.resize(splats.size());
    render_splats_backward(splats, view, background, settings, adjoints, sg);
    chain_splat_grads_to_bound(sg, cloud);
}

namespace {

/// Splats whose colors encode the face normal as 0.5 (n + 1).
SplatArrays normal_colored_splats(const BoundGaussianCloud& cloud) {
    SplatArrays splats = bound_to_splats(cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 n = cloud.mesh.face_normal(cloud.faces[i]);
        splats.colors[i] = 0.5 * (n + Vec3::Ones());
    }
    return splats;
}

} // namespace

RenderOutput render_bound_normals(const BoundGaussianCloud& cloud, const CameraView& view,
                                  const Vec3& background, const RenderSettings& settings) {
    return render_splats(normal_colored_splats(cloud), view, background, settings);
}

void render_bound_normals_backward(BoundGaussianCloud& cloud, const CameraView& view,
                                   const Vec3& background, const RenderSettings& settings,
                                   const RenderAdjoints& adjoints) {
    const SplatArrays splats = normal_colored_splats(cloud);
    SplatGrads sg;
    sg.resize(splats.size());
    render_splats_backward(splats, view, background, settings, adjoints, sg);
    cloud.grad.resize(cloud.size(), cloud.mesh.vertex_count());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const int face = cloud.faces[i];
        const Eigen::Vector3i& fv = cloud.mesh.faces[face];
        const FaceFrame fr = face_frame(cloud.mesh, face);
        // Splat color was 0.5 (n + 1) with n = m / |m|, m = e1 x e2.
        const Vec3 d_n = 0.5 * sg.d_color[i];
        const Vec3 d_m = (d_n - fr.n * fr.n.dot(d_n)) / fr.lm;
        const Vec3 d_e1 = fr.e2.cross(d_m);
        const Vec3 d_e2 = d_m.cross(fr.e1);
        cloud.grad.d_vertex[fv[0]] -= d_e1 + d_e2;
        cloud.grad.d_vertex[fv[1]] += d_e1;
        cloud.grad.d_vertex[fv[2]] += d_e2;
        sg.d_color[i].setZero();
    }
    chain_splat_grads_to_bound(sg, cloud);
}

std::vector<Vec3> bake_vertex_colors(const BoundGaussianCloud& cloud) {
    const std::size_t nv = cloud.mesh.vertex_count();
    std::vector<Vec3> accum(nv, Vec3::Zero());
    std::vector<double> wsum(nv, 0.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Eigen::Vector3i& fv = cloud.mesh.faces[cloud.faces[i]];
        const double alpha = cloud.alpha(i);
        for (int k = 0; k < 3; ++k) {
            const double w = alpha * cloud.barys[i][k];
            accum[fv[k]] += w * cloud.colors[i];
            wsum[fv[k]] += w;
        }
    }
    std::vector<Vec3> out(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        if (wsum[v] > 1e-12) {
            out[v] = accum[v] / wsum[v];
        } else {
            out[v] = cloud.mesh.colors.empty() ? Vec3::Constant(0.5) : cloud.mesh.colors[v];
        }
    }
    return out;
}

} // namespace gsopt
