#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace zengram {

/// Thrown when a byte sequence is not well-formed UTF-8.
class Utf8Error : public std::runtime_error {
 public:
  Utf8Error(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Decodes UTF-8 into unicode scalar values. Rejects overlong forms,
/// surrogates and code points above U+10FFFF. `base_offset` is added to
/// the byte offset reported in errors.
std::u32string decode_utf8(std::string_view bytes, std::size_t base_offset = 0);

std::string encode_utf8(std::u32string_view text);
std::string encode_utf8(char32_t cp);

}  // namespace zengram
