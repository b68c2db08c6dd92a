#pragma once

// Little-endian primitive encoding shared by the prime-table and slab files.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string_view>

namespace sievebias::binary {

template <typename U>
inline void put_uint(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename U>
inline U get_uint(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  if (!is.read(bytes.data(), bytes.size())) {
    throw std::runtime_error("binary: unexpected end of stream");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  return value;
}

inline void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), magic.size()); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string buf(magic.size(), '\0');
  if (!is.read(buf.data(), buf.size()) || buf != magic) {
    throw std::runtime_error("binary: bad magic, expected " + std::string(magic));
  }
}

// FNV-1a, used for configuration and spec fingerprints.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sievebias::binary
