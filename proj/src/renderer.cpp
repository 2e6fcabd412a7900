#include "gsopt/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gsopt {

void SplatArrays::validate() const {
    const std::size_t n = centers.size();
    require(covariances.size() == n && alphas.size() == n && colors.size() == n,
            "SplatArrays: buffers not congruent");
    for (std::size_t i = 0; i < n; ++i) {
        require(alphas[i] >= 0.0 && alphas[i] <= 1.0, "SplatArrays: alpha outside [0,1]");
    }
}

void SplatGrads::resize(std::size_t n) {
    d_center.resize(n, Vec3::Zero());
    d_cov.resize(n, Mat3::Zero());
    d_alpha.resize(n, 0.0);
    d_color.resize(n, Vec3::Zero());
}

void SplatGrads::zero() {
    std::fill(d_center.begin(), d_center.end(), Vec3::Zero());
    std::fill(d_cov.begin(), d_cov.end(), Mat3::Zero());
    std::fill(d_alpha.begin(), d_alpha.end(), 0.0);
    std::fill(d_color.begin(), d_color.end(), Vec3::Zero());
}

namespace detail {

namespace {
// Eigenpair of a symmetric 2x2 [[a,b],[b,c]]: lam_min, lam_max and the
// unit eigenvector of lam_min.
struct Eigen2 {
    double lo, hi;
    Vec2 v_lo;
};

Eigen2 sym_eigen2(const Mat2& m) {
    const double a = m(0, 0), c = m(1, 1);
    const double b = 0.5 * (m(0, 1) + m(1, 0));
    const double mean = 0.5 * (a + c);
    const double diff = 0.5 * (a - c);
    const double disc = std::sqrt(diff * diff + b * b);
    Eigen2 e;
    e.lo = mean - disc;
    e.hi = mean + disc;
    Vec2 c1(b, e.lo - a), c2(e.lo - c, b);
    Vec2 v = c1.squaredNorm() >= c2.squaredNorm() ? c1 : c2;
    if (v.squaredNorm() < 1e-300) v = Vec2(1, 0);  // isotropic: any direction
    e.v_lo = v.normalized();
    return e;
}
} // namespace

Mat2 eigen_floor(const Mat2& a, double floor) {
    const Eigen2 e = sym_eigen2(a);
    if (e.lo >= floor) return a;
    if (e.hi <= floor) return floor * Mat2::Identity();
    return a + (floor - e.lo) * (e.v_lo * e.v_lo.transpose());
}

Mat2 eigen_floor_backward(const Mat2& a, double floor, const Mat2& up) {
    const Eigen2 e = sym_eigen2(a);
    if (e.lo >= floor) return up;
    if (e.hi <= floor) return Mat2::Zero();
    const Mat2 g = 0.5 * (up + up.transpose());
    const Vec2 v = e.v_lo;
    const Vec2 vp(-v.y(), v.x());  // eigenvector of lam_max
    const double vgv = v.dot(g * v);
    const double vpgv = vp.dot(g * v);
    Mat2 out = g - vgv * (v * v.transpose()) +
               (2.0 * (floor - e.lo) / (e.lo - e.hi)) * vpgv * (vp * v.transpose());
    return 0.5 * (out + out.transpose());
}

} // namespace detail

namespace {

constexpr int kTile = 16;

struct PreparedSplat {
    Vec2 mean;
    double ca, cb, cc;  // conic = inverse floored 2D covariance [[ca,cb],[cb,cc]]
    double depth;
    double alpha;
    Vec3 color;
    int id;
    int x0, x1, y0, y1;  // inclusive pixel bbox
};

struct Prepared {
    std::vector<PreparedSplat> splats;  // depth-sorted, ties by storage index
    std::vector<std::vector<int>> tile_lists;
    int tiles_x = 0, tiles_y = 0;
    double cutoff_e = std::numeric_limits<double>::infinity();
};

struct ProjIntermediate {
    Vec3 x_cam;
    Eigen::Matrix<double, 2, 3> jac;
    Mat2 cov2d;     // before the floor
    Mat2 cov2d_fl;  // after the floor
    Vec2 mean;
    bool visible = false;
};

ProjIntermediate project_full(const Vec3& center, const Mat3& cov_world,
                              const CameraView& view, const RenderSettings& settings) {
    ProjIntermediate p;
    p.x_cam = view.to_camera(center);
    const double z = p.x_cam.z();
    if (z <= view.near || z >= view.far) return p;
    const double f = view.focal();
    const Vec2 c = view.principal_point();
    p.mean = Vec2(c.x() + f * p.x_cam.x() / z, c.y() + f * p.x_cam.y() / z);
    p.jac << f / z, 0, -f * p.x_cam.x() / (z * z),
             0, f / z, -f * p.x_cam.y() / (z * z);
    const Mat3 w = view.rotation();
    const Eigen::Matrix<double, 2, 3> b = p.jac * w;
    p.cov2d = b * cov_world * b.transpose();
    p.cov2d_fl = detail::eigen_floor(p.cov2d, settings.eigen_floor);
    p.visible = true;
    return p;
}

Prepared prepare(const SplatArrays& splats, const CameraView& view,
                 const RenderSettings& settings) {
    require(settings.eigen_floor > 0.0, "RenderSettings: eigen_floor must be positive");
    require(settings.alpha_max > 0.0 && settings.alpha_max < 1.0,
            "RenderSettings: alpha_max must lie in (0,1)");
    const int w = view.width, h = view.height;

    Prepared prep;
    if (settings.cutoff_sigma > 0.0) {
        prep.cutoff_e = 0.5 * settings.cutoff_sigma * settings.cutoff_sigma;
    }
    prep.tiles_x = (w + kTile - 1) / kTile;
    prep.tiles_y = (h + kTile - 1) / kTile;

    prep.splats.reserve(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const ProjIntermediate p = project_full(splats.centers[i], splats.covariances[i],
                                                view, settings);
        if (!p.visible) continue;
        PreparedSplat s;
        s.mean = p.mean;
        const Mat2& cf = p.cov2d_fl;
        const double det = cf(0, 0) * cf(1, 1) - cf(0, 1) * cf(1, 0);
        s.ca = cf(1, 1) / det;
        s.cb = -0.5 * (cf(0, 1) + cf(1, 0)) / det;
        s.cc = cf(0, 0) / det;
        s.depth = p.x_cam.z();
        s.alpha = splats.alphas[i];
        s.color = splats.colors[i];
        s.id = static_cast<int>(i);
        if (settings.cutoff_sigma > 0.0) {
            const double rx = settings.cutoff_sigma * std::sqrt(cf(0, 0));
            const double ry = settings.cutoff_sigma * std::sqrt(cf(1, 1));
            s.x0 = std::max(0, static_cast<int>(std::floor(s.mean.x() - rx)));
            s.x1 = std::min(w - 1, static_cast<int>(std::ceil(s.mean.x() + rx)));
            s.y0 = std::max(0, static_cast<int>(std::floor(s.mean.y() - ry)));
            s.y1 = std::min(h - 1, static_cast<int>(std::ceil(s.mean.y() + ry)));
        } else {
            s.x0 = 0;
            s.x1 = w - 1;
            s.y0 = 0;
            s.y1 = h - 1;
        }
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;
        prep.splats.push_back(s);
    }

    std::sort(prep.splats.begin(), prep.splats.end(),
              [](const PreparedSplat& a, const PreparedSplat& b) {
                  if (a.depth != b.depth) return a.depth < b.depth;
                  return a.id < b.id;
              });

    prep.tile_lists.assign(static_cast<std::size_t>(prep.tiles_x) * prep.tiles_y, {});
    for (std::size_t k = 0; k < prep.splats.size(); ++k) {
        const PreparedSplat& s = prep.splats[k];
        const int tx0 = s.x0 / kTile, tx1 = s.x1 / kTile;
        const int ty0 = s.y0 / kTile, ty1 = s.y1 / kTile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                prep.tile_lists[static_cast<std::size_t>(ty) * prep.tiles_x + tx]
                    .push_back(static_cast<int>(k));
    }
    return prep;
}

struct ForwardCtx {
    const Prepared* prep;
    const RenderSettings* settings;
    Vec3 background;
    RenderOutput* out;
};

void forward_row(const ForwardCtx& ctx, int y) {
    const Prepared& prep = *ctx.prep;
    const RenderSettings& st = *ctx.settings;
    RenderOutput& out = *ctx.out;
    const int w = out.alpha.width();
    const int ty = y / kTile;
    const double py = y + 0.5;

    for (int x = 0; x < w; ++x) {
        const auto& list = prep.tile_lists[static_cast<std::size_t>(ty) * prep.tiles_x + x / kTile];
        const double px = x + 0.5;
        double t = 1.0, sa = 0.0, sd = 0.0;
        Vec3 sc = Vec3::Zero();
        for (const int k : list) {
            const PreparedSplat& s = prep.splats[k];
            if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
            const double dx = px - s.mean.x();
            const double dy = py - s.mean.y();
            const double e = 0.5 * (s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy);
            if (e > prep.cutoff_e) continue;
            double aa = s.alpha * std::exp(-e);
            if (aa > st.alpha_max) aa = st.alpha_max;
            const double wgt = aa * t;
            sc += wgt * s.color;
            sa += wgt;
            sd += wgt * s.depth;
            t *= (1.0 - aa);
            if (st.transmittance_min > 0.0 && t < st.transmittance_min) break;
        }
        const Vec3 col = sc + (1.0 - sa) * ctx.background;
        out.color.at(y, x, 0) = col.x();
        out.color.at(y, x, 1) = col.y();
        out.color.at(y, x, 2) = col.z();
        out.alpha.at(y, x, 0) = sa;
        out.depth.at(y, x, 0) = sd / std::max(sa, st.depth_eps);
    }
}

struct Contribution {
    int k;  // index into prepared splats
    double aa, g, w, t;
    bool clamped;
};

struct BackwardCtx {
    const Prepared* prep;
    const RenderSettings* settings;
    Vec3 background;
    const RenderAdjoints* adj;
    int width;
};

// Layout of the per-splat screen-space gradient accumulator (10 doubles):
// [d_mean.x, d_mean.y, d_conic.a, d_conic.b, d_conic.c, d_alpha, d_r, d_g, d_b, d_depth]
constexpr int kAcc = 10;

void backward_row(const BackwardCtx& ctx, int y, double* acc,
                  std::vector<Contribution>& scratch) {
    const Prepared& prep = *ctx.prep;
    const RenderSettings& st = *ctx.settings;
    const int w = ctx.width;
    const int ty = y / kTile;
    const double py = y + 0.5;

    for (int x = 0; x < w; ++x) {
        const Vec3 acol = ctx.adj->color
                              ? Vec3(ctx.adj->color->at(y, x, 0), ctx.adj->color->at(y, x, 1),
                                     ctx.adj->color->at(y, x, 2))
                              : Vec3::Zero();
        const double ad = ctx.adj->depth ? ctx.adj->depth->at(y, x, 0) : 0.0;
        const double aal = ctx.adj->alpha ? ctx.adj->alpha->at(y, x, 0) : 0.0;
        if (acol.isZero(0.0) && ad == 0.0 && aal == 0.0) continue;

        const auto& list = prep.tile_lists[static_cast<std::size_t>(ty) * prep.tiles_x + x / kTile];
        const double px = x + 0.5;

        scratch.clear();
        double t = 1.0, sa = 0.0, sd = 0.0;
        for (const int k : list) {
            const PreparedSplat& s = prep.splats[k];
            if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
            const double dx = px - s.mean.x();
            const double dy = py - s.mean.y();
            const double e = 0.5 * (s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy);
            if (e > prep.cutoff_e) continue;
            const double g = std::exp(-e);
            double aa = s.alpha * g;
            const bool clamped = aa > st.alpha_max;
            if (clamped) aa = st.alpha_max;
            scratch.push_back({k, aa, g, aa * t, t, clamped});
            sa += aa * t;
            sd += aa * t * prep.splats[k].depth;
            t *= (1.0 - aa);
            if (st.transmittance_min > 0.0 && t < st.transmittance_min) break;
        }
        if (scratch.empty()) continue;

        const double denom = std::max(sa, st.depth_eps);
        const double ddepth_dsa = sa > st.depth_eps ? -sd / (denom * denom) : 0.0;

        double suffix = 0.0;
        for (std::size_t j = scratch.size(); j-- > 0;) {
            const Contribution& c = scratch[j];
            const PreparedSplat& s = prep.splats[c.k];
            const double pk = acol.dot(s.color - ctx.background) +
                              ad * (s.depth / denom + ddepth_dsa) + aal;
            const double da = pk * c.t - suffix / (1.0 - c.aa);
            suffix += pk * c.w;

            double* a = acc + static_cast<std::size_t>(c.k) * kAcc;
            a[6] += acol.x() * c.w;
            a[7] += acol.y() * c.w;
            a[8] += acol.z() * c.w;
            a[9] += ad * c.w / denom;
            if (c.clamped) continue;
            a[5] += da * c.g;
            const double d_g = da * s.alpha;
            const double d_e = -c.g * d_g;
            const double dx = px - s.mean.x();
            const double dy = py - s.mean.y();
            a[0] += -d_e * (s.ca * dx + s.cb * dy);
            a[1] += -d_e * (s.cb * dx + s.cc * dy);
            a[2] += d_e * 0.5 * dx * dx;
            a[3] += d_e * dx * dy;
            a[4] += d_e * 0.5 * dy * dy;
        }
    }
}

/// Chains screen-space gradients of one prepared splat back to world space.
void finalize_splat(const SplatArrays& splats, const CameraView& view,
                    const RenderSettings& settings, const PreparedSplat& s,
                    const double* a, SplatGrads& grads) {
    const int i = s.id;
    const ProjIntermediate p =
        project_full(splats.centers[i], splats.covariances[i], view, settings);

    const Vec2 d_mean(a[0], a[1]);
    Mat2 d_conic;
    d_conic << a[2], 0.5 * a[3], 0.5 * a[3], a[4];

    // conic = inverse(floored cov): dL/dCov' = -M * dL/dM * M.
    Mat2 conic;
    conic << s.ca, s.cb, s.cb, s.cc;
    const Mat2 d_cov_fl = -(conic * d_conic * conic);
    const Mat2 g2 = detail::eigen_floor_backward(p.cov2d, settings.eigen_floor, d_cov_fl);

    const Mat3 w = view.rotation();
    const Eigen::Matrix<double, 2, 3> b = p.jac * w;

    // cov2d = B Sigma_w B^T.
    grads.d_cov[i] += b.transpose() * g2 * b;

    // J-dependence of cov2d plus the projection mean and splat depth.
    const Eigen::Matrix<double, 2, 3> d_jac =
        2.0 * g2 * p.jac * (w * splats.covariances[i] * w.transpose());
    const double f = view.focal();
    const double z = p.x_cam.z();
    const double inv_z2 = 1.0 / (z * z);
    Vec3 g_xcam = p.jac.transpose() * d_mean;
    g_xcam.x() += d_jac(0, 2) * (-f * inv_z2);
    g_xcam.y() += d_jac(1, 2) * (-f * inv_z2);
    g_xcam.z() += (d_jac(0, 0) + d_jac(1, 1)) * (-f * inv_z2) +
                  d_jac(0, 2) * (2.0 * f * p.x_cam.x() * inv_z2 / z) +
                  d_jac(1, 2) * (2.0 * f * p.x_cam.y() * inv_z2 / z);
    g_xcam.z() += a[9];

    grads.d_center[i] += w.transpose() * g_xcam;
    grads.d_alpha[i] += a[5];
    grads.d_color[i] += Vec3(a[6], a[7], a[8]);
}

} // namespace

Splat2D project_gaussian(const Vec3& center, const Mat3& cov_world,
                         const CameraView& view, const RenderSettings& settings) {
    require(settings.eigen_floor > 0.0, "RenderSettings: eigen_floor must be positive");
    const ProjIntermediate p = project_full(center, cov_world, view, settings);
    Splat2D out;
    if (!p.visible) return out;
    out.mean = p.mean;
    out.cov = p.cov2d_fl;
    out.depth = p.x_cam.z();
    out.visible = true;
    return out;
}

RenderOutput render_splats(const SplatArrays& splats, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings) {
    splats.validate();
    const int w = view.width, h = view.height;
    require(w > 0 && h > 0, "render_splats: empty viewport");

    RenderOutput out;
    out.color = Image(h, w, 3);
    out.depth = Image(h, w, 1);
    out.alpha = Image(h, w, 1);

    const Prepared prep = prepare(splats, view, settings);
    ForwardCtx ctx{&prep, &settings, background, &out};

    if (settings.parallel) {
#pragma omp parallel for schedule(static)
        for (int y = 0; y < h; ++y) forward_row(ctx, y);
    } else {
        for (int y = 0; y < h; ++y) forward_row(ctx, y);
    }
    return out;
}

void render_splats_backward(const SplatArrays& splats, const CameraView& view,
                            const Vec3& background, const RenderSettings& settings,
                            const RenderAdjoints& adjoints, SplatGrads& grads) {
    splats.validate();
    require(grads.size() == splats.size(), "render_splats_backward: grads not sized");
    const int w = view.width, h = view.height;
    const auto check = [&](const Image* img, int c, const char* name) {
        if (!img) return;
        require(img->height() == h && img->width() == w && img->channels() == c,
                std::string("render_splats_backward: bad adjoint shape for ") + name);
    };
    check(adjoints.color, 3, "color");
    check(adjoints.depth, 1, "depth");
    check(adjoints.alpha, 1, "alpha");

    const Prepared prep = prepare(splats, view, settings);
    const std::size_t ns = prep.splats.size();
    if (ns == 0) return;

    BackwardCtx ctx{&prep, &settings, background, &adjoints, w};

    std::vector<double> acc(ns * kAcc, 0.0);
    if (settings.parallel) {
#ifdef _OPENMP
        const int nthreads = omp_get_max_threads();
#else
        const int nthreads = 1;
#endif
        if (nthreads > 1) {
            std::vector<std::vector<double>> tl(nthreads);
#pragma omp parallel
            {
#ifdef _OPENMP
                const int tid = omp_get_thread_num();
#else
                const int tid = 0;
#endif
                tl[tid].assign(ns * kAcc, 0.0);
                std::vector<Contribution> scratch;
#pragma omp for schedule(static)
                for (int y = 0; y < h; ++y) backward_row(ctx, y, tl[tid].data(), scratch);
            }
            // Fixed thread-order reduction keeps repeated runs bit-identical.
            for (int t = 0; t < nthreads; ++t) {
                if (tl[t].empty()) continue;
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += tl[t][i];
            }
        } else {
            std::vector<Contribution> scratch;
            for (int y = 0; y < h; ++y) backward_row(ctx, y, acc.data(), scratch);
        }
    } else {
        std::vector<Contribution> scratch;
        for (int y = 0; y < h; ++y) backward_row(ctx, y, acc.data(), scratch);
    }

    if (settings.parallel) {
#pragma omp parallel for schedule(static)
        for (std::int64_t k = 0; k < static_cast<std::int64_t>(ns); ++k) {
            finalize_splat(splats, view, settings, prep.splats[k],
                           acc.data() + k * kAcc, grads);
        }
    } else {
        for (std::size_t k = 0; k < ns; ++k) {
            finalize_splat(splats, view, settings, prep.splats[k],
                           acc.data() + k * kAcc, grads);
        }
    }
}

SplatArrays cloud_to_splats(const GaussianCloud& cloud) {
    SplatArrays s;
    const std::size_t n = cloud.size();
    s.centers = cloud.centers;
    s.covariances.resize(n);
    s.alphas.resize(n);
    s.colors = cloud.colors;
    for (std::size_t i = 0; i < n; ++i) {
        s.covariances[i] = covariance_from(cloud.rotations[i], cloud.log_scales[i]);
        s.alphas[i] = cloud.alpha(i);
    }
    return s;
}

RenderOutput render_cloud(const GaussianCloud& cloud, const CameraView& view,
                          const Vec3& background, const RenderSettings& settings) {
    return render_splats(cloud_to_splats(cloud), view, background, settings);
}

void chain_splat_grads_to_cloud(const GaussianCloud& cloud, const SplatGrads& sg,
                                CloudGrads& grads) {
    const std::size_t n = cloud.size();
    require(sg.size() == n && grads.size() == n,
            "chain_splat_grads_to_cloud: size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        grads.centers[i] += sg.d_center[i];
        grads.colors[i] += sg.d_color[i];

        const double al = cloud.alpha(i);
        grads.opacity_logits[i] += sg.d_alpha[i] * al * (1.0 - al);

        const Mat3 g3 = 0.5 * (sg.d_cov[i] + sg.d_cov[i].transpose());
        const Mat3 r = quat_to_rotmat_raw(cloud.rotations[i]);
        const Vec3 s2 = (2.0 * cloud.log_scales[i].array()).exp();
        const Mat3 d_r = 2.0 * g3 * r * s2.asDiagonal();
        grads.rotations[i] += rotmat_backward(cloud.rotations[i], d_r);
        const Mat3 rtgr = r.transpose() * g3 * r;
        for (int k = 0; k < 3; ++k) {
            grads.log_scales[i][k] += 2.0 * s2[k] * rtgr(k, k);
        }
    }
}

void render_cloud_backward(const GaussianCloud& cloud, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings,
                           const RenderAdjoints& adjoints, CloudGrads& grads) {
    require(grads.size() == cloud.size(), "render_cloud_backward: grads not sized");
    const SplatArrays splats = cloud_to_splats(cloud);
    SplatGrads sg;
    sg.resize(cloud.size());
    render_splats_backward(splats, view, background, settings, adjoints, sg);
    chain_splat_grads_to_cloud(cloud, sg, grads);
}

Image normals_from_depth(const Image& depth, const Image& alpha, const CameraView& view) {
    require(depth.channels() == 1 && alpha.channels() == 1, "normals_from_depth: expects 1-channel inputs");
    require(depth.height() == alpha.height() && depth.width() == alpha.width(),
            "normals_from_depth: depth/alpha shape mismatch");
    const int h = depth.height(), w = depth.width();
    const double f = view.focal();
    const Vec2 c = view.principal_point();

    Image normals(h, w, 3);
    const auto ray = [&](int x, int y) {
        return Vec3((x + 0.5 - c.x()) / f, (y + 0.5 - c.y()) / f, 1.0);
    };
    const auto point = [&](int x, int y) -> Vec3 { return depth.at(y, x, 0) * ray(x, y); };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (alpha.at(y, x, 0) < 0.5) continue;
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            if (xp == xm || yp == ym) continue;
            const Vec3 tu = (point(xp, y) - point(xm, y)) / (xp - xm);
            const Vec3 tv = (point(x, yp) - point(x, ym)) / (yp - ym);
            Vec3 m = tu.cross(tv);
            const double norm = m.norm();
            if (norm < 1e-20) continue;
            if (m.z() > 0) m = -m;
            const Vec3 n = m / m.norm();
            normals.at(y, x, 0) = n.x();
            normals.at(y, x, 1) = n.y();
            normals.at(y, x, 2) = n.z();
        }
    }
    return normals;
}

Image normals_from_depth_backward(const Image& depth, const Image& alpha,
                                  const CameraView& view, const Image& normal_adjoint) {
    require(normal_adjoint.channels() == 3, "normals_from_depth_backward: adjoint must have 3 channels");
    require(normal_adjoint.height() == depth.height() && normal_adjoint.width() == depth.width(),
            "normals_from_depth_backward: adjoint shape mismatch");
    const int h = depth.height(), w = depth.width();
    const double f = view.focal();
    const Vec2 c = view.principal_point();

    Image d_depth(h, w, 1);
    const auto ray = [&](int x, int y) {
        return Vec3((x + 0.5 - c.x()) / f, (y + 0.5 - c.y()) / f, 1.0);
    };
    const auto point = [&](int x, int y) -> Vec3 { return depth.at(y, x, 0) * ray(x, y); };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (alpha.at(y, x, 0) < 0.5) continue;
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
            if (xp == xm || yp == ym) continue;
            const double su = 1.0 / (xp - xm);
            const double sv = 1.0 / (yp - ym);
            const Vec3 tu = (point(xp, y) - point(xm, y)) * su;
            const Vec3 tv = (point(x, yp) - point(x, ym)) * sv;
            Vec3 m = tu.cross(tv);
            const double norm = m.norm();
            if (norm < 1e-20) continue;
            const double sign = m.z() > 0 ? -1.0 : 1.0;
            m *= sign;
            const Vec3 n = m / norm;

            const Vec3 an(normal_adjoint.at(y, x, 0), normal_adjoint.at(y, x, 1),
                          normal_adjoint.at(y, x, 2));
            // n = m/|m|: dL/dm = (I - n n^T)/|m| * an, then undo the flip.
            const Vec3 dm = sign * (an - n * n.dot(an)) / norm;
            const Vec3 dtu = tv.cross(dm);
            const Vec3 dtv = dm.cross(tu);
            d_depth.at(y, xp, 0) += su * dtu.dot(ray(xp, y));
            d_depth.at(y, xm, 0) -= su * dtu.dot(ray(xm, y));
            d_depth.at(yp, x, 0) += sv * dtv.dot(ray(x, yp));
            d_depth.at(ym, x, 0) -= sv * dtv.dot(ray(x, ym));
        }
    }
    return d_depth;
}

} // namespace gsopt
