#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rcut/common.hpp"
#include "rcut/tensor_file.hpp"

namespace rcut {

// Dense RGB image, float [0,1], row-major interleaved (y, x, channel).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

inline std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = fnv1a64(&img.height, sizeof(img.height));
  h = fnv1a64(&img.width, sizeof(img.width), h);
  return fnv1a64(img.data.data(), img.data.size() * sizeof(float), h);
}

// Bilinear resampling with half-pixel centers. Identity when sizes match.
inline Image resize_bilinear(const Image& src, int th, int tw) {
  Image out(th, tw);
  const double sy = static_cast<double>(src.height) / th;
  const double sx = static_cast<double>(src.width) / tw;
  for (int y = 0; y < th; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.height - 1);
    int y1c = std::clamp(y0 + 1, 0, src.height - 1);
    for (int x = 0; x < tw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.width - 1);
      int x1c = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < 3; ++c) {
        double top = (1.0 - wx) * src.at(y0c, x0c, c) + wx * src.at(y0c, x1c, c);
        double bot = (1.0 - wx) * src.at(y1c, x0c, c) + wx * src.at(y1c, x1c, c);
        out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

namespace detail {

inline void skip_ppm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

inline Image decode_ppm(std::istream& in, const std::string& path) {
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (!in || magic != "P6")
    throw FormatError("not a binary RGB PPM (P6): " + path);
  skip_ppm_space(in);
  int w = 0, h = 0, maxval = 0;
  in >> w;
  skip_ppm_space(in);
  in >> h;
  skip_ppm_space(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0) throw FormatError("bad PPM header: " + path);
  if (maxval != 255)
    throw FormatError("PPM maxval " + std::to_string(maxval) +
                      " unsupported (8-bit only): " + path);
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError("truncated PPM pixel data: " + path);
  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* f = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (f) std::fclose(f);
  }
};

inline Image decode_png(const std::string& path) {
  PngReadCloser s;
  s.f = std::fopen(path.c_str(), "rb");
  if (!s.f) throw IoError("cannot open: " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, s.f) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path);
  s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw IoError("libpng init failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(s.png))) throw FormatError("PNG decode error: " + path);
  png_init_io(s.png, s.f);
  png_set_sig_bytes(s.png, 8);
  png_read_info(s.png, s.info);
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(s.png, s.info, &w, &h, &bit_depth, &color_type, nullptr, nullptr,
               nullptr);
  if (color_type != PNG_COLOR_TYPE_RGB || bit_depth != 8)
    throw FormatError("PNG must be 8-bit RGB (no alpha/palette/gray): " + path);
  png_read_update_info(s.png, s.info);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = raw.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(s.png, rows.data());
  png_read_end(s.png, nullptr);
  Image img(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* f = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (f) std::fclose(f);
  }
};

}  // namespace detail

// Writes 8-bit RGB PNG from interleaved bytes.
inline void write_png_rgb8(const std::string& path, int h, int w,
                           const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(h) * w * 3)
    throw ConfigError("write_png_rgb8: buffer size mismatch");
  detail::PngWriteCloser s;
  s.f = std::fopen(path.c_str(), "wb");
  if (!s.f) throw IoError("cannot open for write: " + path);
  s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!s.png) throw IoError("libpng init failed");
  s.info = png_create_info_struct(s.png);
  if (!s.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(s.png))) throw IoError("PNG encode error: " + path);
  png_init_io(s.png, s.f);
  png_set_IHDR(s.png, s.info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(s.png, s.info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_image(s.png, rows.data());
  png_write_end(s.png, nullptr);
}

// PNG from a [0,1] float image.
inline void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> rgb(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    float v = std::clamp(img.data[i], 0.0f, 1.0f);
    rgb[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  write_png_rgb8(path, img.height, img.width, rgb);
}

// Loads a PNG or PPM, scales to [0,1], resizes to target_size x target_size.
inline Image load_image(const std::string& path, int target_size) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char sig[2] = {0, 0};
  f.read(sig, 2);
  if (!f) throw FormatError("file too short: " + path);
  f.seekg(0);
  Image img;
  if (sig[0] == 'P' && sig[1] == '6') {
    img = detail::decode_ppm(f, path);
  } else if (static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P') {
    f.close();
    img = detail::decode_png(path);
  } else {
    throw FormatError("unrecognized image format (need PNG or P6 PPM): " + path);
  }
  if (img.height == target_size && img.width == target_size) return img;
  return resize_bilinear(img, target_size, target_size);
}

// Image <-> TensorFile entry, dims [H, W, 3]. The unit used by the
// external-process protocol.
inline void add_image_entry(TensorFile& tf, const std::string& name,
                            const Image& img) {
  tf.add(name,
         {static_cast<std::uint32_t>(img.height),
          static_cast<std::uint32_t>(img.width), 3u},
         img.data);
}

inline Image image_from_entry(const TensorEntry& e) {
  if (e.dims.size() != 3 || e.dims[2] != 3)
    throw FormatError("image tensor '" + e.name + "' must have dims [H,W,3]");
  Image img(static_cast<int>(e.dims[0]), static_cast<int>(e.dims[1]));
  img.data = e.data;
  return img;
}

}  // namespace rcut
