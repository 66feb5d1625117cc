#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imlx/image.hpp"

namespace imlx {

// Reads P5 (grayscale) or P6 (RGB) netpbm rasters, 8- or 16-bit, scaled to [0,1].
Raster read_pnm(const std::filesystem::path& path);

// Grayscale image as binary PGM. maxval 255 or 65535; 16-bit samples big-endian.
void write_pgm(const std::filesystem::path& path, const Image& image, int maxval = 255);

// Mask as binary PGM with values 0/255.
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_pgm(const std::filesystem::path& path);

// 8-bit RGB PNG (interleaved rgb, 3 bytes per pixel). Self-contained encoder,
// zlib stream with stored deflate blocks.
void write_png_rgb(const std::filesystem::path& path, int height, int width,
                   const std::vector<std::uint8_t>& rgb);

// Write-to-temp plus atomic rename; every artifact writer goes through this so
// a crash never leaves a half-written file behind.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

std::string read_file(const std::filesystem::path& path);

} // namespace imlx
