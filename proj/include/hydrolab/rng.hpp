#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hydrolab {

/// splitmix64 finalizer (Steele, Lea, Flood). Constants:
/// 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t root_seed, std::uint64_t stream_id) noexcept {
  return splitmix64(root_seed ^ splitmix64(stream_id));
}

/// Deterministic random stream for one replica. Only the raw 64-bit output of
/// mt19937_64 is used; the standard fixes that sequence, so streams are
/// identical across platforms.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::uint64_t stream_id)
      : root_seed_(root_seed), stream_id_(stream_id), engine_(stream_seed(root_seed, stream_id)) {}

  std::uint64_t root_seed() const noexcept { return root_seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t bits() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    // (k + 0.5) / 2^53 for k in [0, 2^53)
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Exponential variate with the given rate (inverse transform).
  double exponential(double rate) { return -std::log(uniform_open()) / rate; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire's multiply-shift with rejection
    std::uint64_t x = engine_();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = -n % n;
      while (low < threshold) {
        x = engine_();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  std::uint64_t root_seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace hydrolab
