#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace imlx {

// Single-channel floating image, values expected in [0,1], row-major.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return pixels.size(); }
};

// Multi-channel raster as read from disk (C planes, row-major per plane).
struct Raster {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data; // plane-major: c*H*W + r*W + col

    float at(int c, int r, int col) const {
        return data[(static_cast<std::size_t>(c) * height + r) * width + col];
    }
};

// Binary mask over an image grid; values are 0 or 1.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    Mask() = default;
    Mask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), cells(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return cells[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return cells[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return cells.size(); }

    std::size_t area() const {
        std::size_t n = 0;
        for (auto v : cells) n += v;
        return n;
    }
};

// Inclusive pixel bounds of a rectangular region.
struct CropBox {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;

    int rows() const { return r1 - r0 + 1; }
    int cols() const { return c1 - c0 + 1; }

    void validate(int height, int width) const {
        if (r0 < 0 || c0 < 0 || r0 > r1 || c0 > c1 || r1 >= height || c1 >= width)
            throw std::invalid_argument("CropBox: bounds out of range");
    }
};

} // namespace imlx
