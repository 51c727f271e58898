#include "binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>

#include "sbc/error.hpp"

namespace sbc::io {

namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

}  // namespace

void LeWriter::raw(const void* data, std::size_t size) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void LeWriter::magic(std::string_view tag) { raw(tag.data(), tag.size()); }
void LeWriter::u8(std::uint8_t v) { raw(&v, 1); }
void LeWriter::u16(std::uint16_t v) {
  v = to_le(v);
  raw(&v, sizeof v);
}
void LeWriter::u32(std::uint32_t v) {
  v = to_le(v);
  raw(&v, sizeof v);
}
void LeWriter::u64(std::uint64_t v) {
  v = to_le(v);
  raw(&v, sizeof v);
}
void LeWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void LeWriter::f32s(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(values.data(), values.size_bytes());
  } else {
    for (float v : values) f32(v);
  }
}

void LeWriter::bytes(std::span<const std::uint8_t> data) { raw(data.data(), data.size()); }

void LeReader::raw(void* data, std::size_t size, const char* what) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in_.gcount()) != size) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
}

void LeReader::expect_magic(std::string_view tag) {
  std::string got(tag.size(), '\0');
  raw(got.data(), got.size(), "magic");
  if (got != tag) {
    throw FormatError("bad magic: expected '" + std::string(tag) + "'");
  }
}

std::uint8_t LeReader::u8(const char* what) {
  std::uint8_t v = 0;
  raw(&v, 1, what);
  return v;
}
std::uint16_t LeReader::u16(const char* what) {
  std::uint16_t v = 0;
  raw(&v, sizeof v, what);
  return to_le(v);
}
std::uint32_t LeReader::u32(const char* what) {
  std::uint32_t v = 0;
  raw(&v, sizeof v, what);
  return to_le(v);
}
std::uint64_t LeReader::u64(const char* what) {
  std::uint64_t v = 0;
  raw(&v, sizeof v, what);
  return to_le(v);
}
float LeReader::f32(const char* what) { return std::bit_cast<float>(u32(what)); }

std::vector<float> LeReader::f32s(std::size_t count, const char* what) {
  std::vector<float> out(count);
  if constexpr (std::endian::native == std::endian::little) {
    raw(out.data(), count * sizeof(float), what);
  } else {
    for (auto& v : out) v = f32(what);
  }
  return out;
}

void LeReader::bytes(std::span<std::uint8_t> out, const char* what) {
  raw(out.data(), out.size(), what);
}

}  // namespace sbc::io
