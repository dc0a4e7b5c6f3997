#pragma once

#include <array>
#include <cstdint>

namespace cotdyn {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
/// Output is a pure function of (key, counter), so any position in any
/// stream can be computed independently.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) noexcept;
};

/// Sequential view over a Philox stream identified by (seed, stream id).
/// Draw n of stream s is the same value no matter which thread produces it
/// or what other streams were consumed.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n), n > 0. Unbiased (rejection).
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller.
  double normal() noexcept;

 private:
  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_index_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cotdyn
