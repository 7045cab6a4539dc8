#include "softdiamond/binary_io.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace softdiamond::io {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < data.size()) {
    const std::size_t chunk = std::min<std::size_t>(data.size() - pos, 1u << 30);
    crc = ::crc32(crc, data.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> data) {
  if (data.size() < 4) throw FormatError("Truncated", "missing checksum");
  const auto payload = data.first(data.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, data.data() + payload.size(), 4);
  const std::uint32_t actual = crc32(payload);
  if (stored != actual) {
    throw ChecksumMismatch("stored CRC-32 " + std::to_string(stored) + " != computed " +
                           std::to_string(actual));
  }
  return payload;
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("FileNotFound", "cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("FileNotWritable", "cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw ValidationError("FileNotWritable", "short write to " + path);
}

}  // namespace softdiamond::io
