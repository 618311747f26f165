#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gpatch/tensor.hpp"

namespace gpatch {

// 8-bit RGB raster, row-major {height, width, 3}.
struct Rgb8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes any PNG colour type to 8-bit RGB (alpha dropped, 16-bit reduced).
Rgb8 read_png(const std::filesystem::path& path);
// dpi, when given, is written as a pHYs chunk.
void write_png(const std::filesystem::path& path, const Rgb8& image,
               std::optional<double> dpi = std::nullopt);
// pHYs resolution in dots per inch, if the file carries one in metres.
std::optional<double> read_png_dpi(const std::filesystem::path& path);

// [0,1] -> {0..255} by round(v * 255); values are clamped first.
Rgb8 quantize(const Image& image);
// v / 255.
Image dequantize(const Rgb8& raster);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

}  // namespace gpatch
