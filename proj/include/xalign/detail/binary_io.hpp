#pragma once

// Little-endian primitive encoding, independent of host byte order.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "xalign/error.hpp"

namespace xalign::detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  }
  out.write(bytes.data(), bytes.size());
}

inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }

template <typename U>
U read_le(std::istream& in, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorKind::format, std::string("truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(in, what));
}
inline double read_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& source) {
  char got[4] = {};
  in.read(got, 4);
  if (in.gcount() != 4 || std::string(got, 4) != std::string(magic, 4)) {
    throw Error(ErrorKind::format, "bad magic bytes in " + source + " (expected \"" + magic + "\")");
  }
}

inline void expect_eof(std::istream& in, const std::string& source) {
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorKind::format, "trailing bytes after payload in " + source);
  }
}

}  // namespace xalign::detail
