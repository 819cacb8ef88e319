#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mvprior/error.hpp"

// Little-endian primitives shared by every on-disk format in the library.
namespace mvprior::io {

using Magic = std::array<char, 8>;

inline Magic make_magic(std::string_view s) {
  Magic m{};
  for (std::size_t i = 0; i < m.size() && i < s.size(); ++i) m[i] = s[i];
  return m;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot open " + path + " for writing");
  }

  void magic(const Magic& m) { out_.write(m.data(), std::streamsize(m.size())); }

  template <typename T>
    requires std::is_integral_v<T>
  void integer(T v) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
    out_.write(reinterpret_cast<const char*>(buf), sizeof(U));
  }

  void real(double v) { integer(std::bit_cast<std::uint64_t>(v)); }

  void reals(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) real(p[i]);
  }

  void string(const std::string& s) {
    integer(std::uint32_t(s.size()));
    out_.write(s.data(), std::streamsize(s.size()));
  }

  void close() {
    out_.flush();
    if (!out_) throw FormatError("write to " + path_ + " failed");
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path);
  }

  void expect_magic(const Magic& m) {
    Magic got{};
    raw(got.data(), got.size());
    if (got != m) throw FormatError(path_ + ": bad magic bytes");
  }

  template <typename T>
    requires std::is_integral_v<T>
  T integer() {
    using U = std::make_unsigned_t<T>;
    unsigned char buf[sizeof(U)];
    raw(reinterpret_cast<char*>(buf), sizeof(U));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= U(buf[i]) << (8 * i);
    return static_cast<T>(u);
  }

  double real() { return std::bit_cast<double>(integer<std::uint64_t>()); }

  void reals(double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = real();
  }

  std::string string(std::size_t max_len = 1u << 20) {
    const auto n = integer<std::uint32_t>();
    if (n > max_len) throw FormatError(path_ + ": string length out of range");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  // Throws unless the stream is exhausted.
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof())
      throw FormatError(path_ + ": trailing bytes after payload");
  }

  const std::string& path() const { return path_; }

 private:
  void raw(char* dst, std::size_t n) {
    in_.read(dst, std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) throw FormatError(path_ + ": truncated file");
  }

  std::string path_;
  std::ifstream in_;
};

// FNV-1a over a file's bytes; used for manifests.
inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace mvprior::io
