#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cass/common.hpp"

namespace cass {

// Row-major 8-bit grayscale image.
struct ImageU8 {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> px;

    std::uint8_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
};

// Binary PGM (P5), maxval 255.
ImageU8 read_pgm(const std::string& path);
void write_pgm(const ImageU8& img, const std::string& path);

// 8-bit RGB PNG, rgb laid out row-major with 3 bytes per pixel.
void write_png_rgb(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb);

}  // namespace cass
