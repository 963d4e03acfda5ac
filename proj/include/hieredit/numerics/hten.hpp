// SPDX-License-Identifier: Apache-2.0
//
// HTEN tensor files:
//   "HTEN" | u8 version (=1) | u8 rank | rank x u32 LE dims | f32 LE data (row-major)

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "hieredit/numerics/tensor.hpp"

namespace hieredit::hten {

inline constexpr std::array<char, 4> kMagic{'H', 'T', 'E', 'N'};
inline constexpr std::uint8_t kVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Tensor& t) {
  if (t.rank() > 255) throw IoError("HTEN: rank above 255");
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xffffffffu) throw IoError("HTEN: dimension exceeds u32");
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Tensor decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw IoError("HTEN: bad magic");
  }
  if (bytes[4] != kVersion) throw IoError("HTEN: unsupported version " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  std::size_t pos = 6;
  if (bytes.size() < pos + 4 * rank) throw IoError("HTEN: truncated header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 4) shape[i] = detail::get_u32(bytes.data() + pos);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != pos + 4 * n) throw IoError("HTEN: payload length does not match shape");
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) {
    data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + pos));
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void save(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path.string());
}

inline Tensor load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace hieredit::hten
