#pragma once

// Little-endian field helpers shared by the on-disk formats.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sbc::io {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> values);
  void bytes(std::span<const std::uint8_t> data);

 private:
  void raw(const void* data, std::size_t size);
  std::ostream& out_;
};

// Every read throws FormatError on short input; `what` names the field.
class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  void expect_magic(std::string_view tag);
  std::uint8_t u8(const char* what);
  std::uint16_t u16(const char* what);
  std::uint32_t u32(const char* what);
  std::uint64_t u64(const char* what);
  float f32(const char* what);
  std::vector<float> f32s(std::size_t count, const char* what);
  void bytes(std::span<std::uint8_t> out, const char* what);

 private:
  void raw(void* data, std::size_t size, const char* what);
  std::istream& in_;
};

}  // namespace sbc::io
