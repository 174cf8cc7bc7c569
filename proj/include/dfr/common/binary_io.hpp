#pragma once

// Little-endian binary helpers for the cache and feature file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include "dfr/common/error.hpp"

namespace dfr::binary {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw InputError("cannot open for writing: " + path);
  }

  void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }

  template <typename T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  template <typename T>
  void put_array(const T* data, std::size_t count) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
  }

  void finish() {
    out_.flush();
    if (!out_) throw InputError("write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw InputError("cannot open: " + path);
  }

  void expect_magic(std::string_view m) {
    std::array<char, 8> buf{};
    in_.read(buf.data(), static_cast<std::streamsize>(m.size()));
    if (!in_ || std::string_view(buf.data(), m.size()) != m)
      throw ParseError(path_, "byte 0", "bad magic, expected '" + std::string(m) + "'");
    offset_ += m.size();
  }

  template <typename T>
  T get() {
    T value{};
    read_raw(&value, sizeof(T));
    return value;
  }

  template <typename T>
  void get_array(T* data, std::size_t count) {
    read_raw(data, sizeof(T) * count);
  }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

  // Bytes remaining from the current position, used to validate declared sizes.
  std::uint64_t remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return static_cast<std::uint64_t>(end - here);
  }

 private:
  void read_raw(void* dst, std::size_t bytes) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in_)
      throw ParseError(path_, "byte " + std::to_string(offset_), "unexpected end of file");
    offset_ += bytes;
  }

  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace dfr::binary
