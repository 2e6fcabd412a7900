#pragma once

#include "gsopt/camera.hpp"
#include "gsopt/image.hpp"
#include "gsopt/scene.hpp"

#include <vector>

namespace gsopt {

struct RenderSettings {
    /// Gaussian tail truncation radius in units of sigma; <= 0 disables
    /// truncation (exact kernel, used by the gradient gates).
    double cutoff_sigma = 3.0;
    /// Front-to-back early exit once transmittance drops below this; 0 disables.
    double transmittance_min = 1e-4;
    /// Anti-aliasing floor on the 2D covariance eigenvalues, in pixel^2.
    double eigen_floor = 0.3;
    /// Ceiling on a single splat's contribution, keeps 1 - a bounded away from 0.
    double alpha_max = 0.99999;
    /// Denominator guard for alpha-weighted depth.
    double depth_eps = 1e-8;
    /// OpenMP kernels when true, serial reference kernels when false.
    bool parallel = true;
};

struct RenderOutput {
    Image color;  // H x W x 3, composited over the background
    Image depth;  // H x W x 1, alpha-weighted mean camera depth; 0 where alpha = 0
    Image alpha;  // H x W x 1, accumulated opacity
};

/// Adjoint images for the backward pass; null members contribute nothing.
struct RenderAdjoints {
    const Image* color = nullptr;
    const Image* depth = nullptr;
    const Image* alpha = nullptr;
};

/// World-space splat arrays decoupled from any parameterization, so both
/// free Gaussians and mesh-bound Gaussians share one renderer.
struct SplatArrays {
    std::vector<Vec3> centers;
    std::vector<Mat3> covariances;
    std::vector<double> alphas;
    std::vector<Vec3> colors;

    std::size_t size() const { return centers.size(); }
    void validate() const;
};

/// Gradients w.r.t. the world-space splat quantities.
struct SplatGrads {
    std::vector<Vec3> d_center;
    std::vector<Mat3> d_cov;
    std::vector<double> d_alpha;
    std::vector<Vec3> d_color;

    void resize(std::size_t n);
    void zero();
    std::size_t size() const { return d_center.size(); }
};

/// Screen-space footprint of one Gaussian after perspective projection.
struct Splat2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();  // eigenvalue floor already applied
    double depth = 0.0;
    bool visible = false;
};

/// EWA projection: cov2d = J W Sigma W^T J^T with the eigenvalue floor.
/// Gaussians outside (near, far) are flagged invisible.
Splat2D project_gaussian(const Vec3& center, const Mat3& cov_world,
                         const CameraView& view, const RenderSettings& settings);

RenderOutput render_splats(const SplatArrays& splats, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings);

/// Accumulates (does not overwrite) world-space gradients for the given
/// adjoints. Recomputes the forward quantities internally; `grads` must
/// already be sized to splats.size().
void render_splats_backward(const SplatArrays& splats, const CameraView& view,
                            const Vec3& background, const RenderSettings& settings,
                            const RenderAdjoints& adjoints, SplatGrads& grads);

/// Free-cloud frontends: build world splats from a GaussianCloud and chain
/// gradients back to (center, rotation, log_scale, opacity_logit, color).
SplatArrays cloud_to_splats(const GaussianCloud& cloud);
RenderOutput render_cloud(const GaussianCloud& cloud, const CameraView& view,
                          const Vec3& background, const RenderSettings& settings);
void render_cloud_backward(const GaussianCloud& cloud, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings,
                           const RenderAdjoints& adjoints, CloudGrads& grads);

/// Chains world-splat gradients back into cloud parameter gradients.
void chain_splat_grads_to_cloud(const GaussianCloud& cloud, const SplatGrads& sg,
                                CloudGrads& grads);

/// Camera-space unit normals from an alpha-weighted depth image via central
/// differences and back-projection. Pixels with alpha < 0.5 get zero normal;
/// a fronto-parallel surface maps to (0, 0, -1).
Image normals_from_depth(const Image& depth, const Image& alpha, const CameraView& view);

/// Vector-Jacobian product of normals_from_depth: adjoint on the normal
/// image mapped to an adjoint on the depth image (the alpha mask is a hard
/// gate and receives no gradient).
Image normals_from_depth_backward(const Image& depth, const Image& alpha,
                                  const CameraView& view, const Image& normal_adjoint);

namespace detail {
/// Eigenvalue floor on a symmetric 2x2 matrix and its adjoint (exposed for tests).
Mat2 eigen_floor(const Mat2& a, double floor);
Mat2 eigen_floor_backward(const Mat2& a, double floor, const Mat2& up);
} // namespace detail

} // namespace gsopt
