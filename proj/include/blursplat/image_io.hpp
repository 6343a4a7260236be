// Image files: 32-bit float PFM (exact) and 8-bit PNG (display).
#pragma once

#include "blursplat/render.hpp"

#include <filesystem>

namespace blursplat {

/// Writes a colour PFM ("PF", little-endian, scale -1.0). Values are stored
/// as float32, bottom row first.
void write_pfm(const std::filesystem::path& path, const Image& img);

/// Reads a colour PFM of either endianness. Throws std::runtime_error naming
/// the path on any failure.
Image read_pfm(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);

/// Rounds every value to the nearest float32.
void quantize_to_float(Image& img);

}  // namespace blursplat
