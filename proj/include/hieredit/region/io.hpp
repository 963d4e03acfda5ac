// SPDX-License-Identifier: Apache-2.0
//
// 8-bit PNG (via libpng) and PPM (P3/P6) images, single-channel PNG masks.

#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "hieredit/region/image.hpp"

namespace hieredit {

namespace detail {

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes, std::uint32_t format,
                                            std::size_t& w, std::size_t& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(std::string("png decode: ") + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    throw IoError(std::string("png decode: ") + img.message);
  }
  w = img.width;
  h = img.height;
  return px;
}

inline std::string next_ppm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty()) throw IoError("ppm: truncated header");
  return tok;
}

inline PixelImage decode_ppm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 0;
  const std::string magic = next_ppm_token(b, pos);
  if (magic != "P3" && magic != "P6") throw IoError("ppm: unsupported magic " + magic);
  const long w = std::stol(next_ppm_token(b, pos)), h = std::stol(next_ppm_token(b, pos));
  const long maxval = std::stol(next_ppm_token(b, pos));
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError("ppm: bad header");
  PixelImage img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  if (magic == "P6") {
    ++pos;  // single whitespace after maxval
    if (b.size() < pos + img.data.size()) throw IoError("ppm: truncated pixel data");
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(b[pos + i]) / maxval;
  } else {
    for (auto& v : img.data) v = static_cast<float>(std::stol(next_ppm_token(b, pos))) / maxval;
  }
  return img;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const PixelImage& img) {
  if (img.channels != 3) throw DimensionError("encode_png expects RGB");
  std::vector<std::uint8_t> px(img.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = detail::to_byte(img.data[i]);
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + pi.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + pi.message);
  }
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> encode_ppm(const PixelImage& img) {
  std::ostringstream head;
  head << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const std::string h = head.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (float v : img.data) out.push_back(detail::to_byte(v));
  return out;
}

inline PixelImage decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    std::size_t w = 0, h = 0;
    const auto px = detail::decode_png(bytes, PNG_FORMAT_RGB, w, h);
    PixelImage img(w, h);
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = static_cast<float>(px[i]) / 255.0f;
    return img;
  }
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_ppm(bytes);
  throw IoError("unrecognised image format (expected PNG or PPM)");
}

inline PixelImage load_image(const std::filesystem::path& path) { return decode_image(detail::read_bytes(path)); }

inline void save_png(const PixelImage& img, const std::filesystem::path& path) {
  detail::write_bytes(path, encode_png(img));
}

inline void save_ppm(const PixelImage& img, const std::filesystem::path& path) {
  detail::write_bytes(path, encode_ppm(img));
}

// Gray value > 127 marks a pixel.
inline PixelMask load_mask(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto px = detail::decode_png(detail::read_bytes(path), PNG_FORMAT_GRAY, w, h);
  PixelMask m(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) m.bits[i] = px[i] > 127 ? 1 : 0;
  return m;
}

inline void save_mask(const PixelMask& m, const std::filesystem::path& path) {
  std::vector<std::uint8_t> px(m.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.bits[i] ? 255 : 0;
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(m.width);
  pi.height = static_cast<png_uint_32>(m.height);
  pi.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + pi.message);
  }
}

}  // namespace hieredit
