// Deterministic counter-based random number generation.
//
// All randomness in this project (data symbols, noise draws, randomized
// initial masks) comes from Philox4x32-10 streams so that a (seed, label)
// pair reproduces the same draws on any platform, in any order of use.
//
// Bit-exact specification:
//   * Generator: Philox4x32-10 (Salmon et al., SC'11), multipliers
//     0xD2511F53 / 0xCD9E8D57, Weyl constants 0x9E3779B9 / 0xBB67AE85,
//     10 rounds.
//   * Stream key: key64 = splitmix64(seed XOR fnv1a64(label)); the low
//     32 bits become key[0], the high 32 bits key[1].
//   * Word i of a stream is lane (i mod 4) of the block with counter
//     {lo32(i/4), hi32(i/4), 0, 0}.
//   * uniform53(): two consecutive words a, b combine as
//     ((b << 32 | a) >> 11) * 2^-53, giving a double in [0, 1).
//   * normal(): Box-Muller on (1 - u1, u2); the sine partner is cached
//     and returned on the next call.

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace tlens {

// FNV-1a 64-bit hash (offset 0xcbf29ce484222325, prime 0x100000001b3).
std::uint64_t fnv1a64(std::string_view bytes);

// SplitMix64 finalizer, used to spread seed/label bits over the key.
std::uint64_t splitmix64(std::uint64_t x);

class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  Philox4x32(std::uint64_t seed, std::string_view stream_label);

  // One 10-round Philox block; pure, exposed for known-answer tests.
  static Counter block(Counter counter, Key key);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double next_uniform53();   // [0, 1)
  double next_normal();      // standard normal, Box-Muller

  Key key() const { return key_; }

private:
  void refill();

  Key key_;
  Counter buffer_{};
  std::uint64_t block_index_ = 0;
  int buffer_pos_ = 4;  // empty
  double spare_normal_ = 0.0;
  bool has_spare_normal_ = false;
};

}  // namespace tlens
