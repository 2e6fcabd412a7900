#include "gsopt/mesh.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace gsopt {

Vec3 TriMesh::face_point(std::size_t face, const Vec3& bary) const {
    const Eigen::Vector3i& f = faces.at(face);
    return bary[0] * vertices[f[0]] + bary[1] * vertices[f[1]] + bary[2] * vertices[f[2]];
}

Vec3 TriMesh::face_normal_raw(std::size_t face) const {
    const Eigen::Vector3i& f = faces.at(face);
    const Vec3 e1 = vertices[f[1]] - vertices[f[0]];
    const Vec3 e2 = vertices[f[2]] - vertices[f[0]];
    return e1.cross(e2);
}

Vec3 TriMesh::face_normal(std::size_t face) const {
    const Vec3 raw = face_normal_raw(face);
    const double n = raw.norm();
    require(n > 0.0, "face_normal: degenerate face");
    return raw / n;
}

double TriMesh::face_area(std::size_t face) const {
    return 0.5 * face_normal_raw(face).norm();
}

double TriMesh::total_area() const {
    double sum = 0.0;
    for (std::size_t f = 0; f < faces.size(); ++f) sum += face_area(f);
    return sum;
}

void TriMesh::validate() const {
    const int nv = static_cast<int>(vertices.size());
    for (const Eigen::Vector3i& f : faces) {
        for (int k = 0; k < 3; ++k)
            require(f[k] >= 0 && f[k] < nv, "TriMesh: face index out of range");
    }
    require(colors.empty() || colors.size() == vertices.size(),
            "TriMesh: colors must be empty or match the vertex count");
}

double DensityField::value_at(const Vec3& x) const {
    const double c2 = cutoff_sigma > 0.0 ? cutoff_sigma * cutoff_sigma : 0.0;
    double sum = 0.0;
    for (std::size_t g = 0; g < centers.size(); ++g) {
        const Vec3 d = x - centers[g];
        const double d2 = d.dot(inv_cov[g] * d);
        if (cutoff_sigma > 0.0 && d2 > c2) continue;
        sum += alphas[g] * std::exp(-0.5 * d2);
    }
    return sum;
}

Vec3 DensityField::color_at(const Vec3& x, const Vec3& fallback) const {
    const double c2 = cutoff_sigma > 0.0 ? cutoff_sigma * cutoff_sigma : 0.0;
    double wsum = 0.0;
    Vec3 csum = Vec3::Zero();
    for (std::size_t g = 0; g < centers.size(); ++g) {
        const Vec3 d = x - centers[g];
        const double d2 = d.dot(inv_cov[g] * d);
        if (cutoff_sigma > 0.0 && d2 > c2) continue;
        const double w = alphas[g] * std::exp(-0.5 * d2);
        wsum += w;
        csum += w * colors[g];
    }
    if (wsum < 1e-12) return fallback;
    return csum / wsum;
}

DensityField make_density_field(const GaussianCloud& cloud, double cutoff_sigma) {
    require(cloud.size() > 0, "make_density_field: empty cloud");
    DensityField field;
    field.cutoff_sigma = cutoff_sigma;
    const double extent_sigma = cutoff_sigma > 0.0 ? cutoff_sigma : 5.0;
    const std::size_t n = cloud.size();
    field.centers.resize(n);
    field.inv_cov.resize(n);
    field.alphas.resize(n);
    field.colors.resize(n);
    field.extents.resize(n);
    for (std::size_t g = 0; g < n; ++g) {
        const Mat3 cov = covariance_from(cloud.rotations[g], cloud.log_scales[g]);
        field.centers[g] = cloud.centers[g];
        field.inv_cov[g] = cov.inverse();
        field.alphas[g] = cloud.alpha(g);
        field.colors[g] = cloud.colors[g];
        // Tight axis-aligned bound of the cutoff ellipsoid, padded one ulp-ish
        // so boundary grid points never fall outside the scatter range.
        for (int a = 0; a < 3; ++a)
            field.extents[g][a] = extent_sigma * std::sqrt(cov(a, a)) * (1.0 + 1e-12) + 1e-300;
    }
    return field;
}

std::size_t GridSpec::sample_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nz);
}

std::size_t GridSpec::index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(ny) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(nx) +
           static_cast<std::size_t>(i);
}

Vec3 GridSpec::position(int i, int j, int k) const {
    return origin + Vec3(i * spacing[0], j * spacing[1], k * spacing[2]);
}

void GridSpec::validate() const {
    require(nx >= 2 && ny >= 2 && nz >= 2, "GridSpec: need at least 2 samples per axis");
    require(spacing.minCoeff() > 0.0, "GridSpec: spacing must be positive");
}

GridSpec fit_grid(const DensityField& field, int resolution, double margin) {
    require(resolution >= 2, "fit_grid: resolution must be at least 2");
    require(margin >= 0.0, "fit_grid: margin must be nonnegative");
    require(field.size() > 0, "fit_grid: empty field");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t g = 0; g < field.size(); ++g) {
        lo = lo.cwiseMin(field.centers[g] - field.extents[g]);
        hi = hi.cwiseMax(field.centers[g] + field.extents[g]);
    }
    const Vec3 pad = margin * (hi - lo);
    lo -= pad;
    hi += pad;
    GridSpec grid;
    grid.origin = lo;
    grid.spacing = (hi - lo) / static_cast<double>(resolution - 1);
    grid.nx = grid.ny = grid.nz = resolution;
    grid.validate();
    return grid;
}

namespace {

struct IndexRange {
    int lo[3];
    int hi[3];  // inclusive
};

IndexRange influence_range(const DensityField& field, std::size_t g, const GridSpec& grid) {
    IndexRange r;
    if (field.cutoff_sigma <= 0.0) {
        r.lo[0] = r.lo[1] = r.lo[2] = 0;
        r.hi[0] = grid.nx - 1;
        r.hi[1] = grid.ny - 1;
        r.hi[2] = grid.nz - 1;
        return r;
    }
    const int dims[3] = {grid.nx, grid.ny, grid.nz};
    for (int a = 0; a < 3; ++a) {
        const double lo = field.centers[g][a] - field.extents[g][a];
        const double hi = field.centers[g][a] + field.extents[g][a];
        r.lo[a] = std::max(0, static_cast<int>(std::ceil((lo - grid.origin[a]) / grid.spacing[a])));
        r.hi[a] = std::min(dims[a] - 1,
                           static_cast<int>(std::floor((hi - grid.origin[a]) / grid.spacing[a])));
    }
    return r;
}

/// Accumulates every Gaussian into the z-slab [k_begin, k_end); per-sample
/// accumulation order is the Gaussian index order regardless of slab split.
void accumulate_slab(const DensityField& field, const GridSpec& grid, int k_begin, int k_end,
                     std::vector<double>& values) {
    const double c2 = field.cutoff_sigma > 0.0 ? field.cutoff_sigma * field.cutoff_sigma : 0.0;
    for (std::size_t g = 0; g < field.size(); ++g) {
        IndexRange r = influence_range(field, g, grid);
        r.lo[2] = std::max(r.lo[2], k_begin);
        r.hi[2] = std::min(r.hi[2], k_end - 1);
        const Vec3 mu = field.centers[g];
        const Mat3 a = field.inv_cov[g];
        const double alpha = field.alphas[g];
        for (int k = r.lo[2]; k <= r.hi[2]; ++k) {
            for (int j = r.lo[1]; j <= r.hi[1]; ++j) {
                for (int i = r.lo[0]; i <= r.hi[0]; ++i) {
                    const Vec3 d = grid.position(i, j, k) - mu;
                    const double d2 = d.dot(a * d);
                    if (field.cutoff_sigma > 0.0 && d2 > c2) continue;
                    values[grid.index(i, j, k)] += alpha * std::exp(-0.5 * d2);
                }
            }
        }
    }
}

} // namespace

std::vector<double> sample_density_grid(const DensityField& field, const GridSpec& grid,
                                        bool parallel) {
    grid.validate();
    require(field.size() > 0, "sample_density_grid: empty field");
    std::vector<double> values(grid.sample_count(), 0.0);
    if (!parallel) {
        accumulate_slab(field, grid, 0, grid.nz, values);
        return values;
    }
#pragma omp parallel
    {
        int nthreads = 1, tid = 0;
#ifdef _OPENMP
        nthreads = omp_get_num_threads();
        tid = omp_get_thread_num();
#endif
        const int per = (grid.nz + nthreads - 1) / nthreads;
        const int k_begin = std::min(grid.nz, tid * per);
        const int k_end = std::min(grid.nz, k_begin + per);
        if (k_begin < k_end) accumulate_slab(field, grid, k_begin, k_end, values);
    }
    return values;
}

namespace {

#include "mc_tables.inc"

// Cell corner offsets and the corner pairs spanned by each of the 12 edges,
// in the layout the triangulation table expects.
constexpr int kCellCorner[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};
constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {6, 5},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

std::uint64_t edge_key(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

} // namespace

TriMesh marching_cubes(const std::vector<double>& values, const GridSpec& grid, double iso) {
    grid.validate();
    require(values.size() == grid.sample_count(), "marching_cubes: value count mismatch");
    TriMesh mesh;
    std::unordered_map<std::uint64_t, int> edge_vertex;

    std::size_t corner_id[8];
    double corner_val[8];
    for (int k = 0; k + 1 < grid.nz; ++k) {
        for (int j = 0; j + 1 < grid.ny; ++j) {
            for (int i = 0; i + 1 < grid.nx; ++i) {
                unsigned pattern = 0;
                for (int c = 0; c < 8; ++c) {
                    corner_id[c] = grid.index(i + kCellCorner[c][0], j + kCellCorner[c][1],
                                              k + kCellCorner[c][2]);
                    corner_val[c] = values[corner_id[c]];
                    if (corner_val[c] <= iso) pattern |= 1u << c;
                }
                if (pattern == 0 || pattern == 255) continue;
                const int* row = kTriTable[pattern];
                for (int t = 0; row[t] != -1; t += 3) {
                    int tri[3];
                    for (int m = 0; m < 3; ++m) {
                        const int edge = row[t + m];
                        const int ca = kEdgeCorner[edge][0];
                        const int cb = kEdgeCorner[edge][1];
                        const std::uint64_t key = edge_key(corner_id[ca], corner_id[cb]);
                        auto it = edge_vertex.find(key);
                        if (it == edge_vertex.end()) {
                            // Interpolate along the canonically ordered ends so
                            // the shared vertex is computed once, bit-exactly.
                            int lo = ca, hi = cb;
                            if (corner_id[lo] > corner_id[hi]) std::swap(lo, hi);
                            const double va = corner_val[lo];
                            const double vb = corner_val[hi];
                            const double span = vb - va;
                            const double s = span != 0.0
                                                 ? std::clamp((iso - va) / span, 0.0, 1.0)
                                                 : 0.5;
                            const Vec3 pa = grid.position(i + kCellCorner[lo][0],
                                                          j + kCellCorner[lo][1],
                                                          k + kCellCorner[lo][2]);
                            const Vec3 pb = grid.position(i + kCellCorner[hi][0],
                                                          j + kCellCorner[hi][1],
                                                          k + kCellCorner[hi][2]);
                            it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size()))
                                     .first;
                            mesh.vertices.push_back(pa + s * (pb - pa));
                        }
                        tri[m] = it->second;
                    }
                    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
                    mesh.faces.emplace_back(tri[0], tri[1], tri[2]);
                }
            }
        }
    }
    return mesh;
}

TriMesh extract_isosurface(const GaussianCloud& cloud, const ExtractOptions& options) {
    require(options.iso > 0.0, "extract_isosurface: iso must be positive");
    const DensityField field = make_density_field(cloud, options.cutoff_sigma);
    const GridSpec grid = fit_grid(field, options.resolution, options.margin);
    const std::vector<double> values = sample_density_grid(field, grid, options.parallel);
    TriMesh mesh = marching_cubes(values, grid, options.iso);
    if (options.with_colors) {
        mesh.colors.resize(mesh.vertices.size());
        const Vec3 gray = Vec3::Constant(0.5);
        const std::int64_t nv = static_cast<std::int64_t>(mesh.vertices.size());
#pragma omp parallel for schedule(static) if (options.parallel)
        for (std::int64_t v = 0; v < nv; ++v)
            mesh.colors[v] = field.color_at(mesh.vertices[v], gray);
    }
    return mesh;
}

namespace {

int uf_find(std::vector<int>& parent, int a) {
    while (parent[a] != a) {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    return a;
}

void uf_union(std::vector<int>& parent, int a, int b) {
    a = uf_find(parent, a);
    b = uf_find(parent, b);
    if (a != b) parent[b] = a;
}

} // namespace

std::size_t count_connected_components(const TriMesh& mesh) {
    if (mesh.vertices.empty()) return 0;
    std::vector<int> parent(mesh.vertices.size());
    std::iota(parent.begin(), parent.end(), 0);
    for (const Eigen::Vector3i& f : mesh.faces) {
        uf_union(parent, f[0], f[1]);
        uf_union(parent, f[1], f[2]);
    }
    std::size_t count = 0;
    for (int v = 0; v < static_cast<int>(parent.size()); ++v)
        if (uf_find(parent, v) == v) ++count;
    return count;
}

bool is_watertight(const TriMesh& mesh) {
    if (mesh.faces.empty()) return false;
    std::unordered_map<std::uint64_t, int> edge_count;
    for (const Eigen::Vector3i& f : mesh.faces) {
        for (int m = 0; m < 3; ++m) {
            const std::uint64_t key = edge_key(static_cast<std::size_t>(f[m]),
                                               static_cast<std::size_t>(f[(m + 1) % 3]));
            ++edge_count[key];
        }
    }
    for (const auto& [key, count] : edge_count) {
        (void)key;
        if (count != 2) return false;
    }
    return true;
}

} // namespace gsopt
