#include "invarmon/md5.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace invarmon {

namespace {

constexpr std::array<std::uint32_t, 64> sine_table = {
  0xd76aa478, 0xe8c7b756, 0x242070db, 0xc1bdceee, 0xf57c0faf, 0x4787c62a, 0xa8304613, 0xfd469501,
  0x698098d8, 0x8b44f7af, 0xffff5bb1, 0x895cd7be, 0x6b901122, 0xfd987193, 0xa679438e, 0x49b40821,
  0xf61e2562, 0xc040b340, 0x265e5a51, 0xe9b6c7aa, 0xd62f105d, 0x02441453, 0xd8a1e681, 0xe7d3fbc8,
  0x21e1cde6, 0xc33707d6, 0xf4d50d87, 0x455a14ed, 0xa9e3e905, 0xfcefa3f8, 0x676f02d9, 0x8d2a4c8a,
  0xfffa3942, 0x8771f681, 0x6d9d6122, 0xfde5380c, 0xa4beea44, 0x4bdecfa9, 0xf6bb4b60, 0xbebfbc70,
  0x289b7ec6, 0xeaa127fa, 0xd4ef3085, 0x04881d05, 0xd9d4d039, 0xe6db99e5, 0x1fa27cf8, 0xc4ac5665,
  0xf4292244, 0x432aff97, 0xab9423a7, 0xfc93a039, 0x655b59c3, 0x8f0ccc92, 0xffeff47d, 0x85845dd1,
  0x6fa87e4f, 0xfe2ce6e0, 0xa3014314, 0x4e0811a1, 0xf7537e82, 0xbd3af235, 0x2ad7d2bb, 0xeb86d391,
};

constexpr std::array<int, 64> shifts = {
  7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22,
  5, 9,  14, 20, 5, 9,  14, 20, 5, 9,  14, 20, 5, 9,  14, 20,
  4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23,
  6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21,
};

std::uint32_t load_le32(const std::uint8_t* p) noexcept
{
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

} // namespace

md5::md5() noexcept
  : state_{0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476}
{}

namespace {

enum round_fn { F, G, H, I };

template <round_fn R>
inline void step(std::uint32_t& a, std::uint32_t b, std::uint32_t c, std::uint32_t d,
                 std::uint32_t x, int i) noexcept
{
  std::uint32_t f;
  if constexpr (R == F)
    f = d ^ (b & (c ^ d));
  else if constexpr (R == G)
    f = c ^ (d & (b ^ c));
  else if constexpr (R == H)
    f = b ^ c ^ d;
  else
    f = c ^ (b | ~d);
  a = b + std::rotl(a + f + x + sine_table[i], shifts[i]);
}

} // namespace

void md5::block(const std::uint8_t* p) noexcept
{
  std::uint32_t m[16];
  for (int i = 0; i < 16; ++i)
    m[i] = load_le32(p + 4 * i);

  auto [a, b, c, d] = state_;

  step<F>(a, b, c, d, m[0], 0);
  step<F>(d, a, b, c, m[1], 1);
  step<F>(c, d, a, b, m[2], 2);
  step<F>(b, c, d, a, m[3], 3);
  step<F>(a, b, c, d, m[4], 4);
  step<F>(d, a, b, c, m[5], 5);
  step<F>(c, d, a, b, m[6], 6);
  step<F>(b, c, d, a, m[7], 7);
  step<F>(a, b, c, d, m[8], 8);
  step<F>(d, a, b, c, m[9], 9);
  step<F>(c, d, a, b, m[10], 10);
  step<F>(b, c, d, a, m[11], 11);
  step<F>(a, b, c, d, m[12], 12);
  step<F>(d, a, b, c, m[13], 13);
  step<F>(c, d, a, b, m[14], 14);
  step<F>(b, c, d, a, m[15], 15);
  step<G>(a, b, c, d, m[1], 16);
  step<G>(d, a, b, c, m[6], 17);
  step<G>(c, d, a, b, m[11], 18);
  step<G>(b, c, d, a, m[0], 19);
  step<G>(a, b, c, d, m[5], 20);
  step<G>(d, a, b, c, m[10], 21);
  step<G>(c, d, a, b, m[15], 22);
  step<G>(b, c, d, a, m[4], 23);
  step<G>(a, b, c, d, m[9], 24);
  step<G>(d, a, b, c, m[14], 25);
  step<G>(c, d, a, b, m[3], 26);
  step<G>(b, c, d, a, m[8], 27);
  step<G>(a, b, c, d, m[13], 28);
  step<G>(d, a, b, c, m[2], 29);
  step<G>(c, d, a, b, m[7], 30);
  step<G>(b, c, d, a, m[12], 31);
  step<H>(a, b, c, d, m[5], 32);
  step<H>(d, a, b, c, m[8], 33);
  step<H>(c, d, a, b, m[11], 34);
  step<H>(b, c, d, a, m[14], 35);
  step<H>(a, b, c, d, m[1], 36);
  step<H>(d, a, b, c, m[4], 37);
  step<H>(c, d, a, b, m[7], 38);
  step<H>(b, c, d, a, m[10], 39);
  step<H>(a, b, c, d, m[13], 40);
  step<H>(d, a, b, c, m[0], 41);
  step<H>(c, d, a, b, m[3], 42);
  step<H>(b, c, d, a, m[6], 43);
  step<H>(a, b, c, d, m[9], 44);
  step<H>(d, a, b, c, m[12], 45);
  step<H>(c, d, a, b, m[15], 46);
  step<H>(b, c, d, a, m[2], 47);
  step<I>(a, b, c, d, m[0], 48);
  step<I>(d, a, b, c, m[7], 49);
  step<I>(c, d, a, b, m[14], 50);
  step<I>(b, c, d, a, m[5], 51);
  step<I>(a, b, c, d, m[12], 52);
  step<I>(d, a, b, c, m[3], 53);
  step<I>(c, d, a, b, m[10], 54);
  step<I>(b, c, d, a, m[1], 55);
  step<I>(a, b, c, d, m[8], 56);
  step<I>(d, a, b, c, m[15], 57);
  step<I>(c, d, a, b, m[6], 58);
  step<I>(b, c, d, a, m[13], 59);
  step<I>(a, b, c, d, m[4], 60);
  step<I>(d, a, b, c, m[11], 61);
  step<I>(c, d, a, b, m[2], 62);
  step<I>(b, c, d, a, m[9], 63);

  state_[0] += a;
  state_[1] += b;
  state_[2] += c;
  state_[3] += d;
}

void md5::update(std::span<const std::uint8_t> data) noexcept
{
  auto used = static_cast<std::size_t>(length_ % 64);
  length_ += data.size();
  std::size_t pos = 0;

  if (used != 0) {
    const auto take = std::min(64 - used, data.size());
    std::memcpy(buffer_.data() + used, data.data(), take);
    used += take;
    pos = take;
    if (used < 64)
      return;
    block(buffer_.data());
  }
  for (; pos + 64 <= data.size(); pos += 64)
    block(data.data() + pos);
  if (pos < data.size())
    std::memcpy(buffer_.data(), data.data() + pos, data.size() - pos);
}

void md5::update(std::string_view text) noexcept
{
  update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

md5_value md5::finish() noexcept
{
  const std::uint64_t bit_length = length_ * 8;

  std::uint8_t pad[72] = {0x80};
  const auto used = static_cast<std::size_t>(length_ % 64);
  const std::size_t pad_len = used < 56 ? 56 - used : 120 - used;
  update(std::span<const std::uint8_t>(pad, pad_len));

  std::uint8_t len_bytes[8];
  for (int i = 0; i < 8; ++i)
    len_bytes[i] = static_cast<std::uint8_t>(bit_length >> (8 * i));
  update(std::span<const std::uint8_t>(len_bytes, 8));

  md5_value out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      out[4 * i + j] = static_cast<std::uint8_t>(state_[i] >> (8 * j));
  *this = md5{};
  return out;
}

md5_value md5::hash(std::span<const std::uint8_t> data) noexcept
{
  md5 h;
  h.update(data);
  return h.finish();
}

std::string to_hex(std::span<const std::uint8_t> bytes)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

} // namespace invarmon
