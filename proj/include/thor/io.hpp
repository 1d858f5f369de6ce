#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "thor/image.hpp"

namespace thor::io {

/// Values in [0, 1] stored as 16-bit grayscale.
void write_png16(const Image& img, const std::string& path);
/// Binary mask stored as 8-bit {0, 255}.
void write_mask_png(const Mask& mask, const std::string& path);
/// Values in [0, 1] stored as 8-bit grayscale.
void write_png8(const Image& img, const std::string& path);

/// Reads 8- or 16-bit grayscale (or RGB, converted to luma) into [0, 1].
Image read_png(const std::string& path);
/// Reads a mask PNG; any nonzero pixel is foreground.
Mask read_mask_png(const std::string& path);

/// Raw little-endian float32, row-major, plus `path + ".json"` holding the
/// shape and any `extra` fields.
void write_float_grid(const Image& img, const std::string& path, const nlohmann::json& extra = {});
Image read_float_grid(const std::string& path);

/// Reads either a .png or a float32 grid by extension.
Image read_image(const std::string& path);

struct Rgb {
    std::uint8_t r, g, b;
};
using RgbImage = std::vector<std::vector<Rgb>>;

Rgb heat_color(double v);
RgbImage heatmap(const Image& values, double lo, double hi);
RgbImage grayscale(const Image& values);

/// Horizontal strip of equally sized panels separated by a thin gap.
RgbImage side_by_side(const std::vector<RgbImage>& panels, int gap = 2);
void write_rgb_png(const RgbImage& img, const std::string& path);

/// Writes a JSON document with two-space indentation.
void write_json(const nlohmann::json& doc, const std::string& path);
nlohmann::json read_json(const std::string& path);

/// Creates the directory (and parents) if missing.
void ensure_directory(const std::string& path);

} // namespace thor::io
