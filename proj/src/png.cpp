#include "sfv/png.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace sfv {

void write_png_gray(const std::string& path, int width, int height, const std::vector<std::uint8_t>& pixels) {
  require(width > 0 && height > 0, "image size must be positive");
  require(pixels.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
          "pixel count does not match image size");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::io, "cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::internal, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width)]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_contact_sheet(const Tensor& clips, const std::string& path, int scale, std::int64_t max_clips) {
  require(clips.rank() == 5, "clips must be [B, N, C, H, W]");
  require(scale >= 1, "scale must be >= 1");
  const std::int64_t b = std::min(clips.size(0), max_clips), n = clips.size(1), c = clips.size(2);
  const std::int64_t h = clips.size(3), w = clips.size(4);
  const std::int64_t gap = 1;
  const std::int64_t cw = w * scale + gap, ch = h * scale + gap;
  const auto width = static_cast<int>(n * cw + gap), height = static_cast<int>(b * ch + gap);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 128);
  const std::vector<double> v = clips.to_vector();
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t f = 0; f < n; ++f) {
      for (std::int64_t y = 0; y < h * scale; ++y) {
        for (std::int64_t x = 0; x < w * scale; ++x) {
          double s = 0.0;
          for (std::int64_t k = 0; k < c; ++k) {
            s += v[static_cast<std::size_t>((((i * n + f) * c + k) * h + y / scale) * w + x / scale)];
          }
          const double u = std::clamp((s / static_cast<double>(c) + 1.0) * 127.5, 0.0, 255.0);
          const std::int64_t py = gap + i * ch + y, pxx = gap + f * cw + x;
          px[static_cast<std::size_t>(py * width + pxx)] = static_cast<std::uint8_t>(std::lround(u));
        }
      }
    }
  }
  write_png_gray(path, width, height, px);
}

}  // namespace sfv
