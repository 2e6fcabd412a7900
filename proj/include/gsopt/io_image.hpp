#pragma once

#include "gsopt/image.hpp"

#include <string>

namespace gsopt {

/// 8-bit PNG; values are clamped to [0, 1]. Accepts 1- or 3-channel images.
void write_png(const std::string& path, const Image& image);

/// Returns a 1- or 3-channel image scaled to [0, 1]; 16-bit, palette, and
/// alpha variants are converted on the way in.
Image read_png(const std::string& path);

/// Float32 PFM (little-endian scale header, rows bottom to top).
void write_pfm(const std::string& path, const Image& image);
Image read_pfm(const std::string& path);

} // namespace gsopt
