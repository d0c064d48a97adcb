#pragma once

#include <filesystem>

#include "idcompose/array.hpp"

namespace idc {

struct BBox;

// Images move through the library as RealArray shaped (3 x H x W) with
// channel values in [0, 1]. On disk they are binary PPM (P6), 8-bit RGB:
// dependency-free and byte-stable, which the determinism contracts rely on.

RealArray read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RealArray& image);

// Pixel rectangle for a normalized box on an image of the given size.
// Clamped to bounds; degenerate boxes produce a 1x1 rect.
struct PixelRect {
    std::size_t x0, y0, x1, y1;  // half-open
};
PixelRect to_pixel_rect(const BBox& box, std::size_t height, std::size_t width);

RealArray crop_image(const RealArray& image, const BBox& box);

// Bilinear resize of a (H x W) map; used to match depth maps to the
// generation resolution.
RealArray resize_bilinear(const RealArray& map, std::size_t out_h, std::size_t out_w);

// Channel mean of a (3 x H x W) image -> (H x W).
RealArray luminance(const RealArray& image);

}  // namespace idc
