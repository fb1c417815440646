#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace invarmon {

/// Platform-stable random source. std::mt19937_64's output sequence is fixed
/// by the standard; the distributions in <random> are not, so bounded draws
/// and shuffles are done here.
class rng
{
public:
  explicit rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, bound). bound must be non-zero.
  std::uint64_t below(std::uint64_t bound)
  {
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  /// Uniform in [lo, hi].
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi)
  {
    if (hi - lo == ~std::uint64_t{0})
      return next();
    return lo + below(hi - lo + 1);
  }

  template <typename T>
  void shuffle(std::span<T> items)
  {
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[below(i)]);
  }

  void fill(std::span<std::uint8_t> out)
  {
    std::size_t i = 0;
    while (i < out.size()) {
      auto word = engine_();
      for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
        out[i] = static_cast<std::uint8_t>(word);
        word >>= 8;
      }
    }
  }

private:
  std::mt19937_64 engine_;
};

} // namespace invarmon
