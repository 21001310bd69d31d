#pragma once

#include <cstdint>

namespace takin {

// xoshiro256** by Blackman & Vigna. Chosen over std engines because its
// output is fully specified by the algorithm, so fixtures generated from a
// seed reproduce bit-for-bit across standard libraries and platforms.
class Xoshiro256 {
 public:
  explicit Xoshiro256(std::uint64_t seed);

  std::uint64_t next();

  // Uniform double in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; pairs are cached, so draw order matters
  // for reproducibility.
  double gaussian();

  // Equivalent to 2^128 calls of next(); splits the stream for parallel use.
  void jump();

  // Deterministically derives an independent generator for a substream.
  Xoshiro256 derive(std::uint64_t key) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 mix function; used for seeding and key derivation.
std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace takin
