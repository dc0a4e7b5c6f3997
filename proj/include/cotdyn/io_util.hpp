#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cotdyn {

/// FNV-1a, 64-bit. Identified as "fnv1a64" wherever a checksum is recorded.
inline constexpr std::string_view kChecksumAlgo = "fnv1a64";

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::string to_hex(std::uint64_t value);

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() && { return std::move(buf_); }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoder. Read past the end throws CorruptionError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> raw(std::size_t n);

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  std::uint64_t get(int width);
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Shortest round-trip decimal form of a double, always with a '.' or exponent
/// ("1.0", "2.5", "1e-07").
std::string format_shortest(double value);
/// Fixed notation with the given number of decimals ("0.000000").
std::string format_fixed(double value, int decimals);

}  // namespace cotdyn
