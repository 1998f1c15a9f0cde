// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Tensor binary format "SHTN": magic, u8 dtype code, u8 rank, little-endian
// u64 extents, raw little-endian values. Shared by feature files and
// checkpoints.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

#include "shrink/error.hpp"
#include "shrink/tensor.hpp"

namespace shrink {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T> constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace io {

inline void put_u8(std::ostream &os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void put_u32(std::ostream &os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::ostream &os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void get_bytes(std::istream &is, char *dst, std::size_t n, const char *what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError(std::string("truncated input while reading ") + what);
}

inline std::uint8_t get_u8(std::istream &is, const char *what) {
  char c;
  get_bytes(is, &c, 1, what);
  return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16(std::istream &is, const char *what) {
  unsigned char b[2];
  get_bytes(is, reinterpret_cast<char *>(b), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream &is, const char *what) {
  unsigned char b[4];
  get_bytes(is, reinterpret_cast<char *>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i)
    v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream &is, const char *what) {
  unsigned char b[8];
  get_bytes(is, reinterpret_cast<char *>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | b[i];
  return v;
}

/// Writes through a sibling temp file and renames on success, so a crash
/// never leaves a half-written artifact at `path`.
inline void atomic_write(const std::filesystem::path &path, const std::string &bytes) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os)
      throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
      throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

} // namespace io

template <class T> void write_tensor(std::ostream &os, const Tensor<T> &t) {
  os.write("SHTN", 4);
  io::put_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
  io::put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (const auto e : t.shape())
    io::put_u64(os, e);
  for (const T v : t.values()) {
    if constexpr (std::is_same_v<T, float>)
      io::put_u32(os, std::bit_cast<std::uint32_t>(v));
    else
      io::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

/// Reads either stored dtype and converts to T.
template <class T> Tensor<T> read_tensor(std::istream &is) {
  char magic[4];
  io::get_bytes(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, "SHTN", 4) != 0)
    throw FormatError("bad tensor magic");
  const auto code = io::get_u8(is, "tensor dtype");
  if (code > 1)
    throw FormatError("unknown tensor dtype code " + std::to_string(code));
  const auto rank = io::get_u8(is, "tensor rank");
  Shape shape(rank);
  for (auto &e : shape) {
    e = io::get_u64(is, "tensor extent");
    if (e > (std::size_t{1} << 30))
      throw FormatError("implausible tensor extent " + std::to_string(e));
  }
  std::size_t n = 1;
  for (const auto e : shape) {
    n *= e;
    if (n > (std::size_t{1} << 30))
      throw FormatError("implausible tensor size " + shape_str(shape));
  }
  std::vector<T> values(n);
  for (auto &v : values) {
    if (code == static_cast<std::uint8_t>(DType::f32))
      v = static_cast<T>(std::bit_cast<float>(io::get_u32(is, "tensor values")));
    else
      v = static_cast<T>(std::bit_cast<double>(io::get_u64(is, "tensor values")));
  }
  return Tensor<T>(std::move(shape), std::move(values));
}

template <class T> void save_tensor(const std::filesystem::path &path, const Tensor<T> &t) {
  std::ostringstream os;
  write_tensor(os, t);
  io::atomic_write(path, os.str());
}

template <class T> Tensor<T> load_tensor(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open " + path.string());
  return read_tensor<T>(is);
}

} // namespace shrink
