// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace sanst::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written little-endian; add byte swapping for this target");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s.data(), s.size());
  }
  template <typename T>
  void put_vector(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    put_bytes(v.data(), v.size() * sizeof(T));
  }
  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    get_bytes(&value, sizeof(T));
    return value;
  }
  void get_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("unexpected end of file");
  }
  std::uint64_t get_count(std::uint64_t limit = std::uint64_t{1} << 40) {
    const auto n = get<std::uint64_t>();
    if (n > limit) throw FormatError("corrupt length field");
    return n;
  }
  std::string get_string() {
    std::string s(get_count(), '\0');
    get_bytes(s.data(), s.size());
    return s;
  }
  template <typename T>
  std::vector<T> get_vector() {
    std::vector<T> v(get_count());
    get_bytes(v.data(), v.size() * sizeof(T));
    return v;
  }
  void expect_magic(const char (&magic)[9]) {
    char buf[8];
    get_bytes(buf, 8);
    if (std::memcmp(buf, magic, 8) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
  }

 private:
  std::istream& in_;
};

}  // namespace sanst::io
