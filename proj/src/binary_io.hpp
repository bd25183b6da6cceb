#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "geosig/error.hpp"

namespace geosig::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error(ErrorCode::Io, "unexpected end of file");
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error(ErrorCode::UnsupportedFormat, "string field too long");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error(ErrorCode::Io, "unexpected end of file");
  return s;
}

inline void put_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void get_doubles(std::istream& in, double* data, std::size_t n) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double))))
    throw Error(ErrorCode::Io, "unexpected end of file");
}

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace geosig::io
