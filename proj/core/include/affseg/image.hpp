#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "affseg/label_map.hpp"

namespace affseg {

/// 8-bit image, planar channel-major layout (c, y, x).
struct ImageU8 {
  int channels = 0;
  int h = 0;
  int w = 0;
  std::vector<uint8_t> data;

  ImageU8() = default;
  ImageU8(int c, int height, int width, uint8_t fill = 0)
      : channels(c), h(height), w(width),
        data(static_cast<size_t>(c) * height * width, fill) {}

  uint8_t& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * h + y) * w + x];
  }
  uint8_t at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * h + y) * w + x];
  }
};

/// 16-bit single-channel image (depth maps in integer units).
struct ImageGray16 {
  int h = 0;
  int w = 0;
  std::vector<uint16_t> data;

  ImageGray16() = default;
  ImageGray16(int height, int width, uint16_t fill = 0)
      : h(height), w(width), data(static_cast<size_t>(height) * width, fill) {}

  uint16_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
  uint16_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }
};

struct PaletteColor {
  uint8_t r, g, b;
};

// PNG I/O. Read errors throw std::runtime_error with the path in the message.
ImageU8 read_png_rgb8(const std::filesystem::path& path);
void write_png_rgb8(const std::filesystem::path& path, const ImageU8& image);
ImageGray16 read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const ImageGray16& image);

/// Palette-indexed 8-bit PNG; pixel values are the palette indices.
LabelMap read_png_indexed(const std::filesystem::path& path);
void write_png_indexed(const std::filesystem::path& path, const LabelMap& labels,
                       const std::vector<PaletteColor>& palette);

/// Bilinear resample of one double plane (half-pixel center convention).
std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int out_h,
                                    int out_w);
/// Nearest-neighbour label resize; never invents values absent from src.
LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w);

/// [0,1] double plane -> 8-bit with half-up rounding, and back.
std::vector<uint8_t> quantize_u8(const std::vector<double>& plane);
std::vector<double> dequantize_u8(const std::vector<uint8_t>& plane);

}  // namespace affseg
