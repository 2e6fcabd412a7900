#pragma once

#include "gsopt/binding.hpp"
#include "gsopt/scene.hpp"

#include <string>
#include <vector>

namespace gsopt {

/// Binary little-endian PLY, one vertex element per Gaussian with float32
/// properties x y z rot_0..rot_3 scale_0..scale_2 opacity f_dc_0..f_dc_2
/// (rotation as a wxyz quaternion, scales and opacity in log/logit space).
void write_gaussian_ply(const std::string& path, const GaussianCloud& cloud);

/// Reads clouds written by write_gaussian_ply, plus ASCII variants and files
/// with extra properties (skipped). Truncated payloads raise IoError with
/// the offending byte offset.
GaussianCloud read_gaussian_ply(const std::string& path);

/// Positions only, from any PLY vertex element with x/y/z properties.
std::vector<Vec3> read_ply_positions(const std::string& path);

/// Bound-cloud payload: int32 face index plus float32 bary_0..2, rot_re,
/// rot_im, scale_0, scale_1, thickness, opacity, f_dc_0..2. The mesh itself
/// is stored separately.
void write_bound_ply(const std::string& path, const BoundGaussianCloud& cloud);

/// Reads bound parameters and attaches them to `mesh`.
BoundGaussianCloud read_bound_ply(const std::string& path, const TriMesh& mesh);

} // namespace gsopt
