#pragma once

#include <array>
#include <cstdint>

namespace harvim {

/// Deterministic random source: xoshiro256++ seeded through splitmix64.
///
/// The integer stream is bit-identical for a given (seed, call sequence)
/// on every platform. Floating-point draws apply a fixed mapping on top
/// of that stream. There is no global generator; every stochastic call
/// site takes an explicit SeededRng so experiments replay exactly.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller. Pairs are generated at once and the
  /// spare is cached, so draws stay cheap and the stream stays replayable.
  double normal();

  /// Independent child stream; hash-derived so streams for distinct
  /// indices do not overlap in practice. Used to give parallel jobs
  /// (per image, per remover) their own generators from one master seed.
  SeededRng derive(std::uint64_t stream_index) const;

  std::uint64_t seed() const { return seed_; }
  /// Number of next_u64 calls made so far.
  std::uint64_t position() const { return position_; }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  std::uint64_t position_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace harvim
