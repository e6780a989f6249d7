// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace chirploc {

/// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 1;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
        return pixels[(row * width + col) * channels + ch];
    }
    bool empty() const { return width == 0 || height == 0 || pixels.empty(); }
};

void write_png(const std::filesystem::path& path, const GrayImage& image);

/// Reads gray, gray+alpha, RGB or RGBA PNGs. Alpha is dropped; the result has
/// one channel for gray inputs and three otherwise.
GrayImage read_png(const std::filesystem::path& path);

}  // namespace chirploc
