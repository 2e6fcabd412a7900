#pragma once

#include "gsopt/mesh.hpp"

#include <string>

namespace gsopt {

/// Wavefront OBJ with optional per-vertex colors ('v x y z r g b').
/// Coordinates are printed with enough digits to round-trip their float32
/// quantization exactly.
void write_obj(const std::string& path, const TriMesh& mesh);

/// Reads 'v' and 'f' lines (triangles only); other lines are skipped.
TriMesh read_obj(const std::string& path);

} // namespace gsopt
