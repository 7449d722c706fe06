#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "sssdr/io.hpp"
#include "sssdr/renderer.hpp"

namespace sssdr {

namespace detail {

inline void write_gray_png(const std::vector<png_byte>& pixels, std::size_t w, std::size_t h, const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, pixels.data() + r * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// 8-bit grayscale PNG of a waterfall, value / norm clamped to [0, 1]. A
/// sidecar `<path>.norm.txt` records the factor. norm <= 0 uses the maximum.
inline double write_waterfall_png(const Waterfall& wf, const std::string& path, double norm = 0.0) {
  if (wf.rows == 0) throw ConfigError("cannot write an empty waterfall image");
  if (!(norm > 0.0)) norm = wf.max();
  if (!(norm > 0.0)) norm = 1.0;
  const std::size_t w = wf.cols(), h = wf.rows;
  std::vector<png_byte> pixels(w * h);
  for (std::size_t k = 0; k < pixels.size(); ++k) {
    const double v = std::clamp(wf.data[k] / norm, 0.0, 1.0);
    pixels[k] = static_cast<png_byte>(std::lround(255.0 * v));
  }
  detail::write_gray_png(pixels, w, h, path);

  auto side = detail::open_out(path + ".norm.txt");
  detail::exact(side);
  side << "norm " << norm << '\n';
  return norm;
}

/// Width, height and 8-bit samples of a grayscale PNG (used by tests).
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

inline GrayImage read_gray_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw ParseError(path + ": " + img.message);
  img.format = PNG_FORMAT_GRAY;
  GrayImage out{img.width, img.height, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError(path + ": " + img.message);
  }
  return out;
}

}  // namespace sssdr
