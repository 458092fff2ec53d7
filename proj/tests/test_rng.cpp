#include <cmath>

#include "doctest.h"
#include "tlens/rng.hpp"

using namespace tlens;

// Known-answer vectors from the Random123 distribution (kat_vectors,
// philox4x32-10).
TEST_CASE("philox4x32-10 known answers") {
  const auto zero = Philox4x32::block({0, 0, 0, 0}, {0, 0});
  CHECK(zero == Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

  const auto ones = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                      {0xffffffffu, 0xffffffffu});
  CHECK(ones == Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

  const auto pi_digits = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                           {0xa4093822u, 0x299f31d0u});
  CHECK(pi_digits == Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("same seed and label reproduce the stream") {
  Philox4x32 a(42, "noise");
  Philox4x32 b(42, "noise");
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u32() == b.next_u32());
}

TEST_CASE("different labels give different streams") {
  Philox4x32 a(42, "noise");
  Philox4x32 b(42, "symbols");
  int agree = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u32() == b.next_u32()) ++agree;
  CHECK(agree < 8);  // no identical prefix
}

TEST_CASE("uniform draws live in [0,1) and normals have sane moments") {
  Philox4x32 rng(7, "moments");
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_uniform53();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.next_normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}
