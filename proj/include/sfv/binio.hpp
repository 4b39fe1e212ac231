#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sfv/tensor.hpp"

namespace sfv::binio {

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

// Little-endian byte sink.
class Writer {
 public:
  void bytes(const void* p, std::size_t n);
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void str(std::string_view s) { bytes(s.data(), s.size()); }
  // Raw element data of a tensor in its own dtype.
  void tensor_data(const Tensor& t);
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader; every overrun is a format error.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void bytes(void* p, std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::string str(std::size_t n);
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

// Appends CRC32 of bytes [from, end) to the buffer.
void append_crc(std::vector<std::uint8_t>& buf, std::size_t from);
// Verifies and strips the trailing CRC32 over [from, end-4).
void check_crc(const std::vector<std::uint8_t>& buf, std::size_t from, const std::string& what);

}  // namespace sfv::binio
