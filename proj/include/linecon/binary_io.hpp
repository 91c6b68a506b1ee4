#pragma once

// Little-endian binary readers/writers shared by the feature, graph and
// checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace linecon {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace bin {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_needed(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void magic(std::string_view tag) { out_.write(tag.data(), static_cast<std::streamsize>(tag.size())); }

  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    value = byteswap_if_needed(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  template <class T>
  void array(const std::vector<T>& values) {
    for (const T& v : values) put<T>(v);
  }

  void check() const {
    if (!out_) throw std::runtime_error("write failed");
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void expect_magic(std::string_view tag) {
    std::string got(tag.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!in_ || got != tag) throw FormatError(what_ + ": bad magic (expected \"" + std::string(tag) + "\")");
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) throw FormatError(what_ + ": truncated file");
    return byteswap_if_needed(value);
  }

  std::string str(std::uint32_t max_len = 1u << 24) {
    auto n = get<std::uint32_t>();
    if (n > max_len) throw FormatError(what_ + ": string length out of range");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw FormatError(what_ + ": truncated file");
    return s;
  }

  template <class T>
  std::vector<T> array(std::size_t n) {
    std::vector<T> values;
    values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) values.push_back(get<T>());
    return values;
  }

  void expect_eof() {
    if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes");
  }

  const std::string& what() const { return what_; }

 private:
  std::istream& in_;
  std::string what_;
};

}  // namespace bin
}  // namespace linecon
