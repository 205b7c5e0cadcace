#pragma once

// Little-endian binary file helpers shared by the container and checkpoint
// readers/writers. All multi-byte fields in the on-disk formats are
// little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lmvp/errors.hpp"
#include "lmvp/strings.hpp"

namespace lmvp::binio {

inline void put_u32(std::string& out, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  out.append(b, 4);
}

inline void put_u64(std::string& out, uint64_t v) {
  put_u32(out, uint32_t(v & 0xffffffffu));
  put_u32(out, uint32_t(v >> 32));
}

inline void put_f32(std::string& out, float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f32_span(std::string& out, const float* v, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(v), n * 4);
  } else {
    for (size_t i = 0; i < n; ++i) put_f32(out, v[i]);
  }
}

// Sequential reader that tracks its byte offset for error messages.
class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  void need(size_t n, const char* what) {
    if (remaining() < n)
      throw FormatError(cat(path_, ": truncated file, need ", n, " bytes for ", what, " at byte offset ", pos_,
                            " but only ", remaining(), " remain"));
  }

  uint32_t get_u32(const char* what) {
    need(4, what);
    const auto* b = reinterpret_cast<const uint8_t*>(bytes_.data() + pos_);
    pos_ += 4;
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  }

  uint64_t get_u64(const char* what) {
    uint64_t lo = get_u32(what);
    uint64_t hi = get_u32(what);
    return lo | hi << 32;
  }

  std::string get_bytes(size_t n, const char* what) {
    need(n, what);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void get_f32_span(float* dst, size_t n, const char* what) {
    need(n * 4, what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, bytes_.data() + pos_, n * 4);
      pos_ += n * 4;
    } else {
      for (size_t i = 0; i < n; ++i) {
        uint32_t bits = get_u32(what);
        std::memcpy(dst + i, &bits, 4);
      }
    }
  }

  void expect_magic(const char* magic, size_t len) {
    need(len, "magic");
    if (std::memcmp(bytes_.data() + pos_, magic, len) != 0)
      throw FormatError(cat(path_, ": bad magic at byte offset ", pos_, ", expected \"", magic, "\""));
    pos_ += len;
  }

  void expect_end() {
    if (remaining() != 0)
      throw FormatError(cat(path_, ": ", remaining(), " unexpected trailing bytes at byte offset ", pos_));
  }

  const std::string& path() const { return path_; }

 private:
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot open '", path, "' for reading"));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(cat("read failure on '", path, "'"));
  return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(cat("cannot open '", path, "' for writing"));
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError(cat("write failure on '", path, "'"));
}

}  // namespace lmvp::binio
