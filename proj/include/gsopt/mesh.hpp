#pragma once

#include "gsopt/common.hpp"
#include "gsopt/scene.hpp"

#include <cstddef>
#include <vector>

namespace gsopt {

/// Indexed triangle mesh with optional per-vertex colors.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<Eigen::Vector3i> faces;
    std::vector<Vec3> colors;  ///< Empty, or one RGB triple per vertex.

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    /// Point on a face at the given barycentric coordinates.
    Vec3 face_point(std::size_t face, const Vec3& bary) const;
    /// Cross product of the two edge vectors (length = twice the face area).
    Vec3 face_normal_raw(std::size_t face) const;
    /// Unit face normal; throws on a degenerate face.
    Vec3 face_normal(std::size_t face) const;
    double face_area(std::size_t face) const;
    double total_area() const;

    /// Checks face index bounds and the color array size.
    void validate() const;
};

/// Gaussian mixture density sigma(x) = sum_g alpha_g exp(-0.5 d_g^2(x)) where
/// d_g is the Mahalanobis distance under the Gaussian's world covariance.
struct DensityField {
    std::vector<Vec3> centers;
    std::vector<Mat3> inv_cov;
    std::vector<double> alphas;
    std::vector<Vec3> colors;
    /// Per-Gaussian half extent of the axis-aligned influence box (cutoff
    /// ellipsoid bound); unused entries when cutoff is disabled.
    std::vector<Vec3> extents;
    /// Contributions with d^2 > cutoff_sigma^2 are skipped; <= 0 disables.
    double cutoff_sigma = 5.0;

    std::size_t size() const { return centers.size(); }
    /// Density at a point (gathers over all Gaussians, same skip rule as the
    /// grid sampler, so it matches the grid bitwise at grid points).
    double value_at(const Vec3& x) const;
    /// Density-weighted mean color at a point; `fallback` where the local
    /// density underflows.
    Vec3 color_at(const Vec3& x, const Vec3& fallback) const;
};

DensityField make_density_field(const GaussianCloud& cloud, double cutoff_sigma = 5.0);

/// Regular sampling grid; sample (i, j, k) sits at origin + (i sx, j sy, k sz),
/// values are stored x-fastest.
struct GridSpec {
    Vec3 origin = Vec3::Zero();
    Vec3 spacing = Vec3::Ones();
    int nx = 0, ny = 0, nz = 0;

    std::size_t sample_count() const;
    std::size_t index(int i, int j, int k) const;
    Vec3 position(int i, int j, int k) const;
    void validate() const;
};

/// Cubic grid over the field's influence bounding box expanded by `margin`
/// (fraction of each axis extent) with `resolution` samples per axis.
GridSpec fit_grid(const DensityField& field, int resolution, double margin);

/// Evaluates the density on the grid. Per-Gaussian scatter with the influence
/// box bound; the parallel kernel splits the grid into z-slabs and is bitwise
/// identical to the serial one.
std::vector<double> sample_density_grid(const DensityField& field, const GridSpec& grid,
                                        bool parallel);

/// Marching cubes over grid samples. Crossing vertices are deduplicated per
/// grid edge, so a surface that stays inside the grid comes out watertight.
TriMesh marching_cubes(const std::vector<double>& values, const GridSpec& grid, double iso);

struct ExtractOptions {
    int resolution = 128;       ///< Grid samples per axis.
    double iso = 0.3;           ///< Density threshold.
    double margin = 0.1;        ///< Bounding box expansion fraction per axis.
    double cutoff_sigma = 5.0;  ///< Gaussian influence radius; <= 0 disables.
    bool parallel = true;
    bool with_colors = true;    ///< Sample density-weighted colors at vertices.
};

/// Full extraction: density field, grid sampling, marching cubes, colors.
TriMesh extract_isosurface(const GaussianCloud& cloud, const ExtractOptions& options = {});

/// Number of connected components of the vertex graph induced by the faces.
std::size_t count_connected_components(const TriMesh& mesh);

/// True when every undirected edge is shared by exactly two faces.
bool is_watertight(const TriMesh& mesh);

} // namespace gsopt
