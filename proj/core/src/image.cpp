#include "affseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace affseg {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("png: " + what + ": " + path.string());
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

void open_reader(PngReader& r, FILE* f, const std::filesystem::path& path) {
  png_byte header[8];
  if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail(path, "not a PNG file");
  }
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) fail(path, "png_create_read_struct failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) fail(path, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(r.png))) fail(path, "decode error");
  png_init_io(r.png, f);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);
}

void open_writer(PngWriter& w, FILE* f, const std::filesystem::path& path) {
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!w.png) fail(path, "png_create_write_struct failed");
  w.info = png_create_info_struct(w.png);
  if (!w.info) fail(path, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(w.png))) fail(path, "encode error");
  png_init_io(w.png, f);
}

}  // namespace

ImageU8 read_png_rgb8(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(path, "cannot open");
  PngReader r;
  open_reader(r, f.get(), path);

  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  if (png_get_channels(r.png, r.info) != 3) fail(path, "expected 3 channels after expansion");

  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  ImageU8 img(3, h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      img.at(0, y, x) = row[static_cast<size_t>(x) * 3];
      img.at(1, y, x) = row[static_cast<size_t>(x) * 3 + 1];
      img.at(2, y, x) = row[static_cast<size_t>(x) * 3 + 2];
    }
  }
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_rgb8(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 3) {
    throw std::invalid_argument("write_png_rgb8: image must have 3 channels");
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(path, "cannot open for write");
  PngWriter w;
  open_writer(w, f.get(), path);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.w),
               static_cast<png_uint_32>(image.h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_byte> row(static_cast<size_t>(image.w) * 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      row[static_cast<size_t>(x) * 3] = image.at(0, y, x);
      row[static_cast<size_t>(x) * 3 + 1] = image.at(1, y, x);
      row[static_cast<size_t>(x) * 3 + 2] = image.at(2, y, x);
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

ImageGray16 read_png_gray16(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(path, "cannot open");
  PngReader r;
  open_reader(r, f.get(), path);

  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_GRAY) fail(path, "expected grayscale");
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  ImageGray16 img(h, w);
  if (depth == 16) {
    std::vector<png_byte> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
      png_read_row(r.png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) {
        // PNG stores 16-bit samples big-endian
        img.at(y, x) = static_cast<uint16_t>((row[static_cast<size_t>(x) * 2] << 8) |
                                             row[static_cast<size_t>(x) * 2 + 1]);
      }
    }
  } else if (depth == 8) {
    std::vector<png_byte> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
      png_read_row(r.png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) img.at(y, x) = row[static_cast<size_t>(x)];
    }
  } else {
    fail(path, "unsupported grayscale bit depth");
  }
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_gray16(const std::filesystem::path& path, const ImageGray16& image) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(path, "cannot open for write");
  PngWriter w;
  open_writer(w, f.get(), path);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.w),
               static_cast<png_uint_32>(image.h), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_byte> row(static_cast<size_t>(image.w) * 2);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      const uint16_t v = image.at(y, x);
      row[static_cast<size_t>(x) * 2] = static_cast<png_byte>(v >> 8);
      row[static_cast<size_t>(x) * 2 + 1] = static_cast<png_byte>(v & 0xff);
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

LabelMap read_png_indexed(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail(path, "cannot open");
  PngReader r;
  open_reader(r, f.get(), path);

  const int depth = png_get_bit_depth(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    fail(path, "expected palette or grayscale label image");
  }
  if (depth < 8) png_set_packing(r.png);
  if (depth == 16) fail(path, "expected 8-bit label image");
  png_read_update_info(r.png, r.info);

  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  LabelMap labels(h, w);
  std::vector<png_byte> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < w; ++x) labels.at(y, x) = row[static_cast<size_t>(x)];
  }
  png_read_end(r.png, nullptr);
  return labels;
}

void write_png_indexed(const std::filesystem::path& path, const LabelMap& labels,
                       const std::vector<PaletteColor>& palette) {
  if (palette.empty() || palette.size() > 256) {
    throw std::invalid_argument("write_png_indexed: palette size must be in [1,256]");
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail(path, "cannot open for write");
  PngWriter w;
  open_writer(w, f.get(), path);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(labels.w),
               static_cast<png_uint_32>(labels.h), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> colors(palette.size());
  for (size_t i = 0; i < palette.size(); ++i) {
    colors[i] = {palette[i].r, palette[i].g, palette[i].b};
  }
  png_set_PLTE(w.png, w.info, colors.data(), static_cast<int>(colors.size()));
  png_write_info(w.png, w.info);
  std::vector<png_byte> row(static_cast<size_t>(labels.w));
  for (int y = 0; y < labels.h; ++y) {
    for (int x = 0; x < labels.w; ++x) {
      const int v = labels.at(y, x);
      if (v < 0 || v >= static_cast<int>(palette.size())) {
        throw std::invalid_argument("write_png_indexed: label " + std::to_string(v) +
                                    " outside palette");
      }
      row[static_cast<size_t>(x)] = static_cast<png_byte>(v);
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int out_h,
                                    int out_w) {
  if (static_cast<long>(src.size()) != static_cast<long>(h) * w) {
    throw std::invalid_argument("resize_bilinear: plane size does not match extents");
  }
  std::vector<double> dst(static_cast<size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = src[static_cast<size_t>(y0) * w + x0] * (1.0 - wx) +
                         src[static_cast<size_t>(y0) * w + x1] * wx;
      const double bot = src[static_cast<size_t>(y1) * w + x0] * (1.0 - wx) +
                         src[static_cast<size_t>(y1) * w + x1] * wx;
      dst[static_cast<size_t>(y) * out_w + x] = top * (1.0 - wy) + bot * wy;
    }
  }
  return dst;
}

LabelMap resize_nearest(const LabelMap& src, int out_h, int out_w) {
  LabelMap dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int iy = std::min(static_cast<int>((y + 0.5) * sy), src.h - 1);
    for (int x = 0; x < out_w; ++x) {
      int ix = std::min(static_cast<int>((x + 0.5) * sx), src.w - 1);
      dst.at(y, x) = src.at(iy, ix);
    }
  }
  return dst;
}

std::vector<uint8_t> quantize_u8(const std::vector<double>& plane) {
  std::vector<uint8_t> out(plane.size());
  for (size_t i = 0; i < plane.size(); ++i) {
    const double v = std::floor(plane[i] * 255.0 + 0.5);
    out[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

std::vector<double> dequantize_u8(const std::vector<uint8_t>& plane) {
  std::vector<double> out(plane.size());
  for (size_t i = 0; i < plane.size(); ++i) out[i] = plane[i] / 255.0;
  return out;
}

}  // namespace affseg
