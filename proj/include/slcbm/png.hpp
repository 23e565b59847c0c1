#pragma once

// Minimal 8-bit PNG read/write on top of libpng.

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "slcbm/core.hpp"

namespace slcbm::png {

struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  bool operator==(const Raster&) const = default;
};

namespace detail {

inline void write_cb(png_structp p, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(p));
  out->append(reinterpret_cast<const char*>(data), len);
}

inline void flush_cb(png_structp) {}

struct ReadCursor {
  const std::string* bytes;
  std::size_t pos;
};

inline void read_cb(png_structp p, png_bytep data, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(p));
  if (cur->pos + len > cur->bytes->size()) png_error(p, "truncated PNG stream");
  std::memcpy(data, cur->bytes->data() + cur->pos, len);
  cur->pos += len;
}

}  // namespace detail

inline std::string encode(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw Error("png: unsupported channel count");
  if (r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw Error("png: pixel buffer size mismatch");

  png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = p ? png_create_info_struct(p) : nullptr;
  if (!info) {
    png_destroy_write_struct(&p, nullptr);
    throw Error("png: out of memory");
  }
  std::string out;
  if (setjmp(png_jmpbuf(p))) {
    png_destroy_write_struct(&p, &info);
    throw Error("png: encode failed");
  }
  png_set_write_fn(p, &out, detail::write_cb, detail::flush_cb);
  png_set_IHDR(p, info, r.width, r.height, 8, r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(p, info);
  const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels;
  for (int y = 0; y < r.height; ++y)
    png_write_row(p, const_cast<png_bytep>(r.pixels.data() + y * stride));
  png_write_end(p, nullptr);
  png_destroy_write_struct(&p, &info);
  return out;
}

inline Raster decode(const std::string& bytes, const std::string& name) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw ValidationError("not a PNG file: " + name);

  png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = p ? png_create_info_struct(p) : nullptr;
  if (!info) {
    png_destroy_read_struct(&p, nullptr, nullptr);
    throw Error("png: out of memory");
  }
  detail::ReadCursor cur{&bytes, 0};
  Raster r;
  if (setjmp(png_jmpbuf(p))) {
    png_destroy_read_struct(&p, &info, nullptr);
    throw ValidationError("corrupt PNG file: " + name);
  }
  png_set_read_fn(p, &cur, detail::read_cb);
  png_read_info(p, info);

  const auto color = png_get_color_type(p, info);
  if (png_get_bit_depth(p, info) == 16) png_set_strip_16(p);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(p);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(p, info) < 8) png_set_expand_gray_1_2_4_to_8(p);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(p);
  png_read_update_info(p, info);

  r.width = static_cast<int>(png_get_image_width(p, info));
  r.height = static_cast<int>(png_get_image_height(p, info));
  r.channels = png_get_channels(p, info);
  const std::size_t stride = png_get_rowbytes(p, info);
  r.pixels.resize(stride * r.height);
  std::vector<png_bytep> rows(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + y * stride;
  png_read_image(p, rows.data());
  png_read_end(p, nullptr);
  png_destroy_read_struct(&p, &info, nullptr);
  return r;
}

inline void write(const std::filesystem::path& path, const Raster& r) { write_file_atomic(path, encode(r)); }

inline Raster read(const std::filesystem::path& path) { return decode(read_file(path), path.string()); }

}  // namespace slcbm::png
