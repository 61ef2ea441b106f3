#pragma once

#include <array>
#include <cstdint>

#include "ifk/matkit.hpp"

namespace ifk {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// Identity of the stream, so other implementations can reproduce it:
///   key     = {seed & 0xffffffff, seed >> 32}
///   counter = {block & 0xffffffff, block >> 32, stream & 0xffffffff, stream >> 32}
/// where `block` starts at 0 and increments once per 4 output words.
/// Words are consumed in order 0..3 of each block.
///
/// uniform(): two consecutive words a, b give
///   ((a >> 5) * 2^26 + (b >> 6) + 0.5) * 2^-53, strictly inside (0, 1).
/// normal(): Box-Muller on two consecutive uniforms u1, u2,
///   r = sqrt(-2 ln u1); returns r cos(2 pi u2), then r sin(2 pi u2).
class Rng {
 public:
  static constexpr const char* kAlgorithm = "philox4x32-10";

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Raw Philox4x32-10 block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                             std::array<std::uint32_t, 2> key);

  std::uint32_t next_u32();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// n independent standard normals.
  Vec normal_vec(Eigen::Index n);

  /// Sample from N(0, cov) where cov may be singular.
  Vec gaussian(const Mat& cov);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ifk
