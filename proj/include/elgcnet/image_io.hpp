#pragma once

// Minimal 8-bit image I/O: PNG (via libpng's simplified API) and binary
// PPM/PGM. Everything wider than 8 bits per sample is rejected rather than
// silently converted.

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "elgcnet/tensor.hpp"

namespace elgc {

struct Image8 {
  int h = 0, w = 0, c = 0;  // c is 1 (gray) or 3 (rgb), row-major h*w*c
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() &&
         s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline int pnm_read_token(std::istream& is) {
  // Skips whitespace and '#' comments, then parses one non-negative integer.
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = is.get();
  }
  if (ch == EOF || !std::isdigit(ch)) return -1;
  int v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + (ch - '0');
    ch = is.get();
  }
  return v;
}

inline Image8 read_pnm(const std::string& path, int want_channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open image: " + path);
  char p, kind;
  is.get(p);
  is.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw IngestionError("unsupported PNM variant in " + path +
                         " (only binary P5/P6)");
  const int file_c = kind == '6' ? 3 : 1;
  const int w = pnm_read_token(is);
  const int h = pnm_read_token(is);
  const int maxval = pnm_read_token(is);
  if (w <= 0 || h <= 0) throw IngestionError("bad PNM header in " + path);
  if (maxval != 255)
    throw IngestionError("unsupported PNM bit depth (maxval " +
                         std::to_string(maxval) + ") in " + path);
  std::vector<std::uint8_t> raw(std::size_t(h) * w * file_c);
  is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (std::size_t(is.gcount()) != raw.size())
    throw IngestionError("truncated PNM pixel data in " + path);

  Image8 img;
  img.h = h;
  img.w = w;
  img.c = want_channels;
  img.pixels.resize(std::size_t(h) * w * want_channels);
  for (std::int64_t i = 0; i < std::int64_t(h) * w; ++i) {
    if (file_c == want_channels) {
      for (int k = 0; k < file_c; ++k)
        img.pixels[std::size_t(i * want_channels + k)] =
            raw[std::size_t(i * file_c + k)];
    } else if (file_c == 1) {  // gray -> rgb broadcast
      for (int k = 0; k < want_channels; ++k)
        img.pixels[std::size_t(i * want_channels + k)] = raw[std::size_t(i)];
    } else {  // rgb -> gray, integer luminance
      const int r = raw[std::size_t(i * 3)], gg = raw[std::size_t(i * 3 + 1)],
                b = raw[std::size_t(i * 3 + 2)];
      img.pixels[std::size_t(i)] =
          std::uint8_t((299 * r + 587 * gg + 114 * b + 500) / 1000);
    }
  }
  return img;
}

inline Image8 read_png_file(const std::string& path, int want_channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IngestionError("cannot decode PNG " + path + ": " + image.message);
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw IngestionError("unsupported 16-bit PNG: " + path);
  }
  image.format = want_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img;
  img.h = int(image.height);
  img.w = int(image.width);
  img.c = want_channels;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IngestionError("cannot read PNG " + path + ": " + msg);
  }
  return img;
}

}  // namespace detail

// Reads a PNG or binary PPM/PGM as 8-bit, converting to the requested channel
// count (1 or 3).
inline Image8 read_image(const std::string& path, int want_channels) {
  if (want_channels != 1 && want_channels != 3)
    throw UsageError("read_image supports 1 or 3 channels");
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IngestionError("cannot open image: " + path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '6'))
    return detail::read_pnm(path, want_channels);
  return detail::read_png_file(path, want_channels);
}

inline void write_png(const std::string& path, const Image8& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.w);
  image.height = png_uint_32(img.h);
  image.format = img.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0,
                               nullptr))
    throw IngestionError("cannot write PNG " + path + ": " + image.message);
}

inline void write_pnm(const std::string& path, const Image8& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot open for writing: " + path);
  os << (img.c == 3 ? "P6" : "P5") << '\n'
     << img.w << ' ' << img.h << '\n'
     << 255 << '\n';
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           std::streamsize(img.pixels.size()));
  if (!os) throw IngestionError("short write: " + path);
}

// Dispatches on extension: .png or .ppm/.pgm.
inline void write_image(const std::string& path, const Image8& img) {
  if (detail::has_suffix(path, ".png"))
    write_png(path, img);
  else if (detail::has_suffix(path, ".ppm") || detail::has_suffix(path, ".pgm"))
    write_pnm(path, img);
  else
    throw UsageError("unsupported output image extension: " + path);
}

// [H,W,3] or [H,W] float tensor in [0,1] -> 8-bit image (values clamped).
template <class T>
Image8 tensor_to_image(const Tensor<T>& t) {
  Image8 img;
  if (t.rank() == 3) {
    img.h = t.dim(0);
    img.w = t.dim(1);
    img.c = t.dim(2);
  } else if (t.rank() == 2) {
    img.h = t.dim(0);
    img.w = t.dim(1);
    img.c = 1;
  } else {
    throw UsageError("tensor_to_image expects rank 2 or 3");
  }
  if (img.c != 1 && img.c != 3)
    throw UsageError("tensor_to_image expects 1 or 3 channels");
  img.pixels.resize(std::size_t(t.size()));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, double(t[i])));
    img.pixels[std::size_t(i)] = std::uint8_t(v * 255.0 + 0.5);
  }
  return img;
}

}  // namespace elgc
