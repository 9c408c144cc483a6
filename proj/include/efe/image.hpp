#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace efe {

/// Planar C x H x W float image, values nominally in [0, 1]. Pixel (y, x)
/// has its center at continuous coordinate (x, y).
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    bool same_size(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

/// Writes an H x W grid as an 8-bit binary PGM, linearly mapping [lo, hi]
/// to [0, 255], plus a sidecar "<path>.txt" holding lo and hi.
void write_pgm_with_scale(const std::filesystem::path& path, const std::vector<double>& grid,
                          std::size_t height, std::size_t width);

}  // namespace efe
