#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "signflow/core/error.hpp"

// Little-endian scalar I/O for the binary file formats.
namespace signflow::binary {

template <typename U>
void put_uint(std::ostream& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U get_uint(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> b{};
  in.read(reinterpret_cast<char*>(b.data()), sizeof(U));
  if (!in) throw FormatError(std::string(what) + ": truncated");
  U v = 0;
  for (std::size_t i = sizeof(U); i-- > 0;) v = static_cast<U>((v << 8) | b[i]);
  return v;
}

inline std::uint32_t get_u32(std::istream& in, const char* what) { return get_uint<std::uint32_t>(in, what); }
inline std::uint64_t get_u64(std::istream& in, const char* what) { return get_uint<std::uint64_t>(in, what); }

inline double get_f64(std::istream& in, const char* what) {
  const std::uint64_t bits = get_u64(in, what);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline std::string get_string(std::istream& in, const char* what, std::size_t limit = 1u << 26) {
  const std::uint32_t n = get_u32(in, what);
  if (n > limit) throw FormatError(std::string(what) + ": implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError(std::string(what) + ": truncated");
  return s;
}

}  // namespace signflow::binary
