#include "sfv/binio.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sfv::binio {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written as raw little-endian memory");

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void Writer::bytes(const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), b, b + n);
}

void Writer::u16(std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  bytes(b, 2);
}

void Writer::u32(std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  bytes(b, 4);
}

void Writer::tensor_data(const Tensor& t) {
  dispatch(t.dtype(), [&]<class T>() {
    bytes(t.data<T>(), sizeof(T) * static_cast<std::size_t>(t.numel()));
  });
}

void Reader::bytes(void* p, std::size_t n) {
  if (n > remaining()) fail(ErrorCode::format, "truncated file");
  std::memcpy(p, data_ + pos_, n);
  pos_ += n;
}

std::uint8_t Reader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint16_t Reader::u16() {
  std::uint8_t b[2];
  bytes(b, 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t Reader::u32() {
  std::uint8_t b[4];
  bytes(b, 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string Reader::str(std::size_t n) {
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path);
}

void append_crc(std::vector<std::uint8_t>& buf, std::size_t from) {
  const std::uint32_t c = crc32(buf.data() + from, buf.size() - from);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(c >> (8 * i)));
}

void check_crc(const std::vector<std::uint8_t>& buf, std::size_t from, const std::string& what) {
  if (buf.size() < from + 4) fail(ErrorCode::format, what + ": truncated file");
  const std::size_t end = buf.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[end + i]) << (8 * i);
  if (crc32(buf.data() + from, end - from) != stored) fail(ErrorCode::checksum, what + ": CRC32 mismatch");
}

}  // namespace sfv::binio
