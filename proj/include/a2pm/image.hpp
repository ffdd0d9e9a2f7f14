#pragma once

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "a2pm/error.hpp"
#include "a2pm/semantic_map.hpp"

namespace a2pm {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw Error(ErrorCode::kInvalidArgument, "image dimensions must be positive");
  }

  std::uint8_t* px(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  BBox bounds() const { return {0, 0, width, height}; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Per-pixel depth in meters; non-positive or non-finite means no depth.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0f) {}

  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  bool valid(int x, int y) const {
    if (x < 0 || y < 0 || x >= width || y >= height) return false;
    const float d = at(x, y);
    return std::isfinite(d) && d > 0.0f;
  }

  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

inline double to_gray(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

/// Bilinear resampling: output pixel (u, v) samples the source at
/// (src_x0 + u * sx, src_y0 + v * sy), clamped to the image.
inline RgbImage resample(const RgbImage& img, double src_x0, double src_y0, double sx, double sy, int out_w,
                         int out_h) {
  RgbImage out(out_w, out_h);
  for (int v = 0; v < out_h; ++v) {
    const double y = std::clamp(src_y0 + v * sy, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (int u = 0; u < out_w; ++u) {
      const double x = std::clamp(src_x0 + u * sx, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.px(x0, y0)[c] * (1 - fx) + img.px(x1, y0)[c] * fx;
        const double bot = img.px(x0, y1)[c] * (1 - fx) + img.px(x1, y1)[c] * fx;
        out.px(u, v)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(top * (1 - fy) + bot * fy, 0.0, 255.0)));
      }
    }
  }
  return out;
}

namespace detail {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};
struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return f;
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // rows, big-endian for 16-bit
};

inline RawPng read_png_raw(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::kParse, "not a PNG file: " + path.string());
  }
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw Error(ErrorCode::kIo, "png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw Error(ErrorCode::kIo, "png_create_info_struct failed");
  RawPng raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(g.png))) throw Error(ErrorCode::kParse, "corrupt PNG: " + path.string());
  png_init_io(g.png, f.get());
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);
  const int color = png_get_color_type(g.png, g.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(g.png, g.info) < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  png_read_update_info(g.png, g.info);
  raw.width = static_cast<int>(png_get_image_width(g.png, g.info));
  raw.height = static_cast<int>(png_get_image_height(g.png, g.info));
  raw.channels = png_get_channels(g.png, g.info);
  raw.bit_depth = png_get_bit_depth(g.png, g.info);
  const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
  raw.bytes.resize(rowbytes * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + y * rowbytes;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  return raw;
}

inline void write_png_raw(const std::filesystem::path& path, int w, int h, int color_type, int bit_depth,
                          const std::uint8_t* bytes, std::size_t rowbytes) {
  FilePtr f = open_file(path, "wb");
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw Error(ErrorCode::kIo, "png_create_write_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw Error(ErrorCode::kIo, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(g.png))) throw Error(ErrorCode::kIo, "PNG write failed: " + path.string());
  png_init_io(g.png, f.get());
  png_set_IHDR(g.png, g.info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // No timestamp or text chunks, so identical pixels give identical files.
  png_write_info(g.png, g.info);
  for (int y = 0; y < h; ++y) png_write_row(g.png, const_cast<png_bytep>(bytes + y * rowbytes));
  png_write_end(g.png, nullptr);
}

}  // namespace detail

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  const detail::RawPng raw = detail::read_png_raw(path);
  RgbImage img(raw.width, raw.height);
  const int step = raw.bit_depth == 16 ? 2 : 1;
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const std::uint8_t* s =
          raw.bytes.data() + (static_cast<std::size_t>(y) * raw.width + x) * raw.channels * step;
      std::uint8_t* d = img.px(x, y);
      if (raw.channels >= 3) {
        for (int c = 0; c < 3; ++c) d[c] = s[c * step];
      } else {
        d[0] = d[1] = d[2] = s[0];
      }
    }
  }
  return img;
}

inline void write_rgb_png(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png_raw(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, img.data.data(),
                        static_cast<std::size_t>(img.width) * 3);
}

inline SemanticMap read_label_png(const std::filesystem::path& path) {
  const detail::RawPng raw = detail::read_png_raw(path);
  if (raw.channels != 1) throw Error(ErrorCode::kParse, "semantic map PNG must be single-channel: " + path.string());
  std::vector<Label> labels(static_cast<std::size_t>(raw.width) * raw.height);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = raw.bit_depth == 16 ? static_cast<Label>((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1])
                                    : raw.bytes[i];
  }
  return SemanticMap(raw.width, raw.height, std::move(labels));
}

inline void write_label_png(const std::filesystem::path& path, const SemanticMap& map) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(map.pixel_count()) * 2);
  const auto labels = map.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(labels[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(labels[i] & 0xff);
  }
  detail::write_png_raw(path, map.width(), map.height(), PNG_COLOR_TYPE_GRAY, 16, bytes.data(),
                        static_cast<std::size_t>(map.width()) * 2);
}

/// Plain (P2) or raw (P5) PGM with maxval up to 65535.
inline SemanticMap read_label_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P5") throw Error(ErrorCode::kParse, "not a PGM file: " + path.string());
  int w = 0, h = 0;
  long maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "malformed PGM header: " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::kParse, "unsupported PGM header: " + path.string());
  }
  std::vector<Label> labels(static_cast<std::size_t>(w) * h);
  if (magic == "P2") {
    for (auto& l : labels) {
      const std::string t = token();
      if (t.empty()) throw Error(ErrorCode::kParse, "truncated PGM: " + path.string());
      const long v = std::stol(t);
      if (v < 0 || v > maxval) throw Error(ErrorCode::kParse, "PGM value out of range: " + path.string());
      l = static_cast<Label>(v);
    }
  } else {
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(labels.size() * bytes);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
      throw Error(ErrorCode::kParse, "truncated PGM: " + path.string());
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = bytes == 2 ? static_cast<Label>((buf[2 * i] << 8) | buf[2 * i + 1]) : buf[i];
    }
  }
  return SemanticMap(w, h, std::move(labels));
}

inline SemanticMap read_semantic_map(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return read_label_pgm(path);
  return read_label_png(path);
}

/// Single-channel little-endian PFM, rows stored top to bottom in memory.
inline void write_pfm(const std::filesystem::path& path, const DepthMap& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  out << "Pf\n" << d.width << " " << d.height << "\n-1.0\n";
  for (int y = d.height - 1; y >= 0; --y) {
    for (int x = 0; x < d.width; ++x) {
      const float v = d.at(x, y);
      std::uint8_t b[4];
      std::memcpy(b, &v, 4);
      if constexpr (std::endian::native == std::endian::big) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

inline DepthMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "Pf" || w <= 0 || h <= 0 || scale == 0) {
    throw Error(ErrorCode::kParse, "unsupported PFM: " + path.string());
  }
  const bool little = scale < 0;
  DepthMap d(w, h);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::kParse, "truncated PFM: " + path.string());
      if (little != (std::endian::native == std::endian::little)) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      float v;
      std::memcpy(&v, b, 4);
      d.at(x, y) = v;
    }
  }
  return d;
}

}  // namespace a2pm
