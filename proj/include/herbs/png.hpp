#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "herbs/tensor.hpp"

namespace herbs {
namespace png {

namespace detail {
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

inline void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> head;
  put_u32(head, uint32_t(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  std::vector<uint8_t> tail;
  put_u32(tail, uint32_t(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

inline uint8_t to_byte(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return uint8_t(std::lround(c * 255.0));
}
}  // namespace detail

// 8-bit PNG writer (grayscale or RGB), filter type 0 on every scanline
inline void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int64_t width,
                      int64_t height, int channels) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
  if (int64_t(pixels.size()) != width * height * channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_png: cannot open " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  detail::put_u32(ihdr, uint32_t(width));
  detail::put_u32(ihdr, uint32_t(height));
  ihdr.push_back(8);                              // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);          // gray / truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::write_chunk(os, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(size_t(height * (width * channels + 1)));
  for (int64_t y = 0; y < height; ++y) {
    raw.push_back(0);  // filter type
    const uint8_t* row = pixels.data() + y * width * channels;
    raw.insert(raw.end(), row, row + width * channels);
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw std::runtime_error("write_png: compression failed");
  compressed.resize(bound);
  detail::write_chunk(os, "IDAT", compressed);
  detail::write_chunk(os, "IEND", {});
  if (!os) throw std::runtime_error("write_png: write failed for " + path);
}

// [H,W] values in [0,1]
inline void write_gray(const std::string& path, const Tensor& plane) {
  const int64_t h = plane.dim(0), w = plane.dim(1);
  std::vector<uint8_t> px(size_t(h * w));
  for (int64_t i = 0; i < h * w; ++i) px[size_t(i)] = detail::to_byte(plane[i]);
  write_png(path, px, w, h, 1);
}

// [3,H,W] values in [0,1]
inline void write_rgb(const std::string& path, const Tensor& img) {
  const int64_t h = img.dim(1), w = img.dim(2);
  std::vector<uint8_t> px(size_t(h * w * 3));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        px[size_t((y * w + x) * 3 + c)] = detail::to_byte(img[(c * h + y) * w + x]);
  write_png(path, px, w, h, 3);
}

// minimal reader for the files this writer produces (filter 0, 8-bit);
// returns interleaved bytes
struct Decoded {
  int64_t width = 0, height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

inline Decoded read_png(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
    throw std::runtime_error("read_png: bad signature");
  auto u32 = [&](size_t off) {
    return (uint32_t(file[off]) << 24) | (uint32_t(file[off + 1]) << 16) |
           (uint32_t(file[off + 2]) << 8) | uint32_t(file[off + 3]);
  };
  Decoded d;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const uint32_t len = u32(pos);
    const std::string type(reinterpret_cast<const char*>(&file[pos + 4]), 4);
    const size_t data = pos + 8;
    if (type == "IHDR") {
      d.width = u32(data);
      d.height = u32(data + 4);
      d.channels = file[data + 9] == 0 ? 1 : 3;
      if (file[data + 8] != 8 || (file[data + 9] != 0 && file[data + 9] != 2))
        throw std::runtime_error("read_png: unsupported format");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), file.begin() + std::ptrdiff_t(data),
                  file.begin() + std::ptrdiff_t(data + len));
    } else if (type == "IEND") {
      break;
    }
    pos = data + len + 4;
  }
  const int64_t stride = d.width * d.channels + 1;
  std::vector<uint8_t> raw(size_t(d.height * stride));
  uLongf raw_len = uLongf(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("read_png: decompression failed");
  d.pixels.resize(size_t(d.height * d.width * d.channels));
  for (int64_t y = 0; y < d.height; ++y) {
    if (raw[size_t(y * stride)] != 0) throw std::runtime_error("read_png: unsupported filter");
    std::copy(raw.begin() + y * stride + 1, raw.begin() + (y + 1) * stride,
              d.pixels.begin() + y * d.width * d.channels);
  }
  return d;
}

}  // namespace png
}  // namespace herbs
