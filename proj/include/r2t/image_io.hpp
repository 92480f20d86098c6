#pragma once

#include "r2t/core_types.hpp"

namespace r2t {

enum class ColorMode { Keep, Rgb, Gray };

/// Reads an 8- or 16-bit PNG as a Raw0To255 tensor ([3,H,W] RGB order or
/// [1,H,W]). 16-bit files are rescaled to 0..255 without quantization.
ImageTensor read_image(const fs::path& path, ColorMode mode = ColorMode::Keep);

/// Writes an 8-bit PNG; values are rounded to the nearest integer level.
void write_image(const fs::path& path, const ImageTensor& image);

/// Writes a Unit0To1 single-channel map as a 16-bit PNG.
void write_image16(const fs::path& path, const ImageTensor& unit_map);

}  // namespace r2t
