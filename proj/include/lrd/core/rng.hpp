#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace lrd {

/// SplitMix64 finalizer. Used to expand seeds and to derive child keys.
constexpr std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept { return splitmix64(x); }

/// Seedable, splittable pseudo-random generator.
///
/// The bit stream is xoshiro256** 1.0 with its 256-bit state expanded from a
/// 64-bit key by SplitMix64. Every derived quantity (uniform doubles, normals,
/// bounded integers) is computed with integer arithmetic or correctly rounded
/// IEEE operations, except `normal()` which calls `log`, `sqrt` and `cos`.
///
/// `child(i)` derives an independent stream from (key, i) without touching
/// this generator's state, so the children of a seed are the same no matter
/// how many draws the parent has made.
class Rng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::string_view algorithm_id = "xoshiro256**/splitmix64-v1";

  explicit Rng(std::uint64_t seed = 0) noexcept : key_(seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  static Rng from_state(const std::array<std::uint64_t, 4>& state) noexcept {
    Rng r;
    r.state_ = state;
    return r;
  }

  std::uint64_t key() const noexcept { return key_; }
  const std::array<std::uint64_t, 4>& state() const noexcept { return state_; }

  Rng child(std::uint64_t index) const noexcept {
    return Rng(mix64(key_ ^ mix64(index ^ 0xd1b54a32d192ed03ULL)));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two words per call.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// True with probability p. p <= 0 never fires, p >= 1 always fires.
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Unbiased integer on [0, n) (Lemire's multiply-and-reject). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t key_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

/// Fisher-Yates shuffle driven by `Rng::uniform_index`; identical on every
/// standard library, unlike std::shuffle.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) noexcept {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_index(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace lrd
