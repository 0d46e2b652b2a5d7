#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "qgk/common.hpp"

// Little-endian primitives shared by the binary container formats.
namespace qgk::binary {

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path.string());
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  template <typename T>
  void put(T value) {
    bytes(&value, sizeof(T));
  }
  template <typename T>
  void put_array(const T* data, std::size_t n) {
    bytes(data, sizeof(T) * n);
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_.string());
  }

 private:
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path.string());
  }
  void expect_magic(std::string_view m) {
    std::string buf(m.size(), '\0');
    bytes(buf.data(), buf.size());
    if (buf != m) throw IoError(path_.string() + ": bad magic, expected " + std::string(m));
  }
  template <typename T>
  T get() {
    T value;
    bytes(&value, sizeof(T));
    return value;
  }
  template <typename T>
  void get_array(T* data, std::size_t n) {
    bytes(data, sizeof(T) * n);
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw IoError(path_.string() + ": trailing bytes after payload");
    }
  }

 private:
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError(path_.string() + ": truncated file");
  }
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace qgk::binary
