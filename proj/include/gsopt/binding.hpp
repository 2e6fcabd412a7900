#pragma once

#include "gsopt/mesh.hpp"
#include "gsopt/renderer.hpp"

#include <cstddef>
#include <vector>

namespace gsopt {

/// Gradients for a mesh-bound Gaussian cloud; `d_vertex` covers the mesh
/// vertices, which train together with the per-Gaussian parameters.
struct BoundGrads {
    std::vector<Vec2> d_rot;
    std::vector<Vec2> d_log_scale_2d;
    std::vector<double> d_thickness_logit;
    std::vector<double> d_opacity_logit;
    std::vector<Vec3> d_color;
    std::vector<Vec3> d_vertex;

    void resize(std::size_t n_gaussians, std::size_t n_vertices);
    void zero();
};

/// Gaussians attached to mesh faces. Each one lives in the local frame of its
/// face: two trainable in-plane log-scales, a trainable in-plane rotation
/// (unit complex, renormalized on use), and a thickness along the face normal
/// that is a bounded fraction of the smaller in-plane scale, so the splats
/// stay flat against the surface. Barycentric coordinates are frozen at
/// binding time; the mesh vertices themselves are trainable.
struct BoundGaussianCloud {
    TriMesh mesh;

    std::vector<int> faces;
    std::vector<Vec3> barys;
    std::vector<Vec2> rots;
    std::vector<Vec2> log_scales_2d;
    std::vector<double> thickness_logits;
    std::vector<double> opacity_logits;
    std::vector<Vec3> colors;

    BoundGrads grad;

    std::size_t size() const { return faces.size(); }
    double alpha(std::size_t i) const { return logistic(opacity_logits[i]); }
    /// Smaller of the two in-plane standard deviations.
    double min_plane_scale(std::size_t i) const;
    /// Standard deviation along the face normal; strictly below a tenth of
    /// the smooth minimum of the in-plane scales by construction.
    double thickness(std::size_t i) const;
    /// World-space center, i.e. the frozen barycentric point of the face.
    Vec3 center(std::size_t i) const { return mesh.face_point(faces[i], barys[i]); }

    void zero_grad();
    void validate() const;
};

struct BindOptions {
    int per_face = 1;      ///< Gaussians per face: 1, 3, or 6.
    double opacity = 0.9;  ///< Initial opacity.
};

/// Barycentric placement pattern for the supported per-face counts.
std::vector<Vec3> binding_pattern(int per_face);

/// Attaches `per_face` Gaussians to every face of the mesh. In-plane scales
/// start so each Gaussian covers roughly its share of the face area; colors
/// start from interpolated vertex colors when present, mid-gray otherwise.
BoundGaussianCloud bind_gaussians(const TriMesh& mesh, const BindOptions& options = {});

/// World-space splats for rendering: center from the barycentric point,
/// covariance R diag(s1^2, s2^2, thickness^2) R^T with R the rotated face
/// frame, opacity and color straight from the parameters.
SplatArrays bound_to_splats(const BoundGaussianCloud& cloud);

/// Chains world-splat gradients back to the bound parameters and the mesh
/// vertices; accumulates into `cloud.grad`.
void chain_splat_grads_to_bound(const SplatGrads& sg, BoundGaussianCloud& cloud);

RenderOutput render_bound(const BoundGaussianCloud& cloud, const CameraView& view,
                          const Vec3& background, const RenderSettings& settings);

/// Accumulates into `cloud.grad`.
void render_bound_backward(BoundGaussianCloud& cloud, const CameraView& view,
                           const Vec3& background, const RenderSettings& settings,
                           const RenderAdjoints& adjoints);

/// Renders the bound splats with their face normals encoded as 0.5 (n + 1)
/// in the color channel; pair with a 0.5-gray background for zero normals.
RenderOutput render_bound_normals(const BoundGaussianCloud& cloud, const CameraView& view,
                                  const Vec3& background, const RenderSettings& settings);

/// Backward of render_bound_normals: the color adjoint chains into the mesh
/// vertices through the face normals; the remaining splat gradients chain
/// through the usual bound-parameter path. Accumulates into `cloud.grad`.
void render_bound_normals_backward(BoundGaussianCloud& cloud, const CameraView& view,
                                   const Vec3& background, const RenderSettings& settings,
                                   const RenderAdjoints& adjoints);

/// Opacity-and-proximity weighted average of the bound Gaussian colors at
/// each mesh vertex; vertices no Gaussian touches keep their current color.
std::vector<Vec3> bake_vertex_colors(const BoundGaussianCloud& cloud);

} // namespace gsopt
