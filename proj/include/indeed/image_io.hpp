#pragma once

#include "indeed/core.hpp"

#include <filesystem>

namespace indeed {

/// Read an 8- or 16-bit PNG / PGM / PPM into [0,1] reals (by extension).
ImageTensor read_image(const std::filesystem::path& path);

/// Write an image with values in [0,1]. 1 channel -> gray, 3 -> color.
/// `bit_depth` is 8 or 16; format chosen by extension (.png/.pgm/.ppm).
void write_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth = 16);

/// Write a possibly-signed component losslessly-enough for inspection: values
/// are affinely mapped onto the 16-bit range and the (lo, hi) window recorded
/// in a `<path>.range.json` sidecar.
void write_component_image(const Matrix& component, const std::filesystem::path& path);

/// Inverse of write_component_image using the sidecar.
Matrix read_component_image(const std::filesystem::path& path);

/// Exact row-major little-endian float64 dump with a small binary header.
void write_array_f64(const Matrix& m, const std::filesystem::path& path);
Matrix read_array_f64(const std::filesystem::path& path);

} // namespace indeed
