#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace invarmon {

using md5_value = std::array<std::uint8_t, 16>;

/// Incremental MD5 (RFC 1321).
class md5
{
public:
  md5() noexcept;

  void update(std::span<const std::uint8_t> data) noexcept;
  void update(std::string_view text) noexcept;
  md5_value finish() noexcept;

  static md5_value hash(std::span<const std::uint8_t> data) noexcept;

private:
  void block(const std::uint8_t* p) noexcept;

  std::array<std::uint32_t, 4> state_;
  std::array<std::uint8_t, 64> buffer_{};
  std::uint64_t length_ = 0;
};

std::string to_hex(std::span<const std::uint8_t> bytes);

} // namespace invarmon
