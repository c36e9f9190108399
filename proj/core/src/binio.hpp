#pragma once

// Little-endian primitive I/O shared by the checkpoint and trace formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mprobe/error.hpp"

namespace mprobe::binio {

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
    return out;
  }
}

template <typename U>
void put(std::ostream& out, U v) {
  const U le = to_le(v);
  out.write(reinterpret_cast<const char*>(&le), sizeof(U));
}

inline void put_f32(std::ostream& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U)))
    fail(ErrorKind::Data, "truncated file while reading " + what);
  return to_le(v);
}

inline float get_f32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(get<std::uint32_t>(in, what));
}

inline void expect_eof(std::istream& in, const std::string& what) {
  if (in.peek() != std::char_traits<char>::eof())
    fail(ErrorKind::Data, "trailing bytes after " + what);
}

}  // namespace mprobe::binio
