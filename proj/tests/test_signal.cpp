#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "tlens/rng.hpp"
#include "tlens/signal.hpp"

using namespace tlens;

namespace {

ComplexEnvelope random_envelope(const SignalGrid& grid, std::uint64_t seed) {
  Philox4x32 rng(seed, "test-signal");
  ComplexEnvelope env(grid);
  for (cplx& v : env.samples) v = cplx(rng.next_normal(), rng.next_normal());
  return env;
}

double rel_error(const ComplexEnvelope& a, const ComplexEnvelope& b) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err += std::norm(a.samples[i] - b.samples[i]);
    ref += std::norm(b.samples[i]);
  }
  return std::sqrt(err / ref);
}

// Desk-scale direct DFT, the independent oracle for the transform.
ComplexEnvelope direct_dft(const ComplexEnvelope& env) {
  const std::size_t n = env.size();
  ComplexEnvelope out(env.grid);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc(0.0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ph = -2.0 * M_PI * static_cast<double>(i) * static_cast<double>(k) /
                        static_cast<double>(n);
      acc += env.samples[i] * cplx(std::cos(ph), std::sin(ph));
    }
    out.samples[k] = acc / std::sqrt(static_cast<double>(n));
  }
  return out;
}

}  // namespace

TEST_CASE("grid invariants") {
  CHECK_THROWS_AS(SignalGrid(100, 1e9), ValidationError);  // not a power of two
  CHECK_THROWS_AS(SignalGrid(1, 1e9), ValidationError);
  CHECK_THROWS_AS(SignalGrid(64, -1.0), ValidationError);
  const SignalGrid g(64, 64e9);
  CHECK(g.bin_spacing_hz() == doctest::Approx(1e9));
  CHECK(g.frequency_at(1) == doctest::Approx(1e9));
  CHECK(g.frequency_at(63) == doctest::Approx(-1e9));
  CHECK(g.frequency_at(32) == doctest::Approx(-32e9));  // upper half is negative
  CHECK(g.duration_s() == doctest::Approx(1e-9));
}

TEST_CASE("constant envelope maps to the DC bin") {
  const SignalGrid grid(256, 10e9);
  ComplexEnvelope ones(grid);
  for (cplx& v : ones.samples) v = cplx(1.0, 0.0);
  const ComplexEnvelope spec = to_spectrum(ones);
  CHECK(std::abs(spec.samples[0]) == doctest::Approx(16.0));  // sqrt(N)
  for (std::size_t k = 1; k < spec.size(); ++k) CHECK(std::abs(spec.samples[k]) < 1e-12);
}

TEST_CASE("impulse has flat-magnitude spectrum") {
  const SignalGrid grid(128, 10e9);
  ComplexEnvelope imp(grid);
  imp.samples[3] = cplx(1.0, 0.0);
  const ComplexEnvelope spec = to_spectrum(imp);
  const double expect = 1.0 / std::sqrt(128.0);
  for (const cplx& v : spec.samples) CHECK(std::abs(v) == doctest::Approx(expect));
}

TEST_CASE("on-bin complex exponential lands in a single bin, against direct DFT") {
  const SignalGrid grid(64, 64e9);
  const double f0 = 5.0 * grid.bin_spacing_hz();
  ComplexEnvelope tone(grid);
  for (std::size_t i = 0; i < tone.size(); ++i) {
    const double ph = 2.0 * M_PI * f0 * grid.time_at(i);
    tone.samples[i] = cplx(std::cos(ph), std::sin(ph));
  }
  const ComplexEnvelope spec = to_spectrum(tone);
  CHECK(std::abs(spec.samples[5]) == doctest::Approx(8.0));
  for (std::size_t k = 0; k < spec.size(); ++k)
    if (k != 5) CHECK(std::abs(spec.samples[k]) < 1e-10);
  // oracle: the FFT path matches a direct DFT sum
  const ComplexEnvelope oracle = direct_dft(tone);
  CHECK(rel_error(spec, oracle) < 1e-12);
}

TEST_CASE("to_time inverts to_spectrum and preserves energy") {
  const SignalGrid grid(512, 80e9);
  const ComplexEnvelope x = random_envelope(grid, 1);
  const ComplexEnvelope back = to_time(to_spectrum(x));
  CHECK(rel_error(back, x) < 1e-12);
  CHECK(std::abs(to_spectrum(x).energy() - x.energy()) / x.energy() < 1e-12);
}

TEST_CASE("single occupied bin becomes a complex exponential") {
  const SignalGrid grid(128, 16e9);
  ComplexEnvelope spec(grid);
  spec.samples[3] = cplx(1.0, 0.0);
  const ComplexEnvelope env = to_time(spec);
  const double df = grid.bin_spacing_hz();
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double ph = 2.0 * M_PI * 3.0 * df * grid.time_at(i);
    const cplx expect = cplx(std::cos(ph), std::sin(ph)) / std::sqrt(128.0);
    CHECK(std::abs(env.samples[i] - expect) < 1e-12);
  }
}

TEST_CASE("transform linearity") {
  const SignalGrid grid(256, 40e9);
  const ComplexEnvelope x = random_envelope(grid, 2);
  const ComplexEnvelope y = random_envelope(grid, 3);
  const cplx a(0.7, -1.1), b(-0.2, 0.4);
  ComplexEnvelope combo(grid);
  for (std::size_t i = 0; i < combo.size(); ++i)
    combo.samples[i] = a * x.samples[i] + b * y.samples[i];
  const ComplexEnvelope lhs = to_spectrum(combo);
  const ComplexEnvelope sx = to_spectrum(x);
  const ComplexEnvelope sy = to_spectrum(y);
  ComplexEnvelope rhs(grid);
  for (std::size_t i = 0; i < rhs.size(); ++i)
    rhs.samples[i] = a * sx.samples[i] + b * sy.samples[i];
  CHECK(rel_error(lhs, rhs) < 1e-12);
}

TEST_CASE("inner product conventions") {
  const SignalGrid grid(64, 10e9);
  const ComplexEnvelope x = random_envelope(grid, 4);
  const cplx self = inner_product(x, x);
  CHECK(self.real() == doctest::Approx(x.energy()));
  CHECK(std::abs(self.imag()) < 1e-12 * x.energy());

  // orthogonal bin-aligned tones
  ComplexEnvelope t1(grid), t2(grid);
  for (std::size_t i = 0; i < grid.num_samples; ++i) {
    const double p1 = 2.0 * M_PI * 2.0 * grid.bin_spacing_hz() * grid.time_at(i);
    const double p2 = 2.0 * M_PI * 7.0 * grid.bin_spacing_hz() * grid.time_at(i);
    t1.samples[i] = cplx(std::cos(p1), std::sin(p1));
    t2.samples[i] = cplx(std::cos(p2), std::sin(p2));
  }
  CHECK(std::abs(inner_product(t1, t2)) < 1e-12 * t1.energy());

  // Cauchy-Schwarz on random pairs
  for (int it = 0; it < 20; ++it) {
    const ComplexEnvelope a = random_envelope(grid, 100 + it);
    const ComplexEnvelope b = random_envelope(grid, 200 + it);
    CHECK(std::abs(inner_product(a, b)) <= std::sqrt(a.energy() * b.energy()) * (1 + 1e-12));
  }

  const SignalGrid other(128, 10e9);
  CHECK_THROWS_AS(inner_product(x, ComplexEnvelope(other)), GridMismatchError);
}

TEST_CASE("frequency shift behaviour") {
  const SignalGrid grid(1024, 10e9);
  const ComplexEnvelope x = random_envelope(grid, 5);

  SUBCASE("zero shift is the identity") {
    ComplexEnvelope same = frequency_shift(x, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.samples[i] == x.samples[i]);
  }
  SUBCASE("one-bin shift moves DC to bin 1") {
    ComplexEnvelope dc(grid);
    for (cplx& v : dc.samples) v = cplx(1.0, 0.0);
    const ComplexEnvelope spec = to_spectrum(frequency_shift(dc, grid.bin_spacing_hz()));
    CHECK(std::abs(spec.samples[1]) == doctest::Approx(32.0));
    CHECK(std::abs(spec.samples[0]) < 1e-9);
  }
  SUBCASE("shift up then down is the identity") {
    const ComplexEnvelope back = frequency_shift(frequency_shift(x, 350e6), -350e6);
    CHECK(rel_error(back, x) < 1e-12);
  }
  SUBCASE("magnitudes are untouched") {
    const ComplexEnvelope shifted = frequency_shift(x, 123.456e6);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(std::abs(std::abs(shifted.samples[i]) - std::abs(x.samples[i])) < 1e-12);
  }
  SUBCASE("beyond Nyquist throws") {
    CHECK_THROWS_AS(frequency_shift(x, 5.1e9), ValidationError);
  }
}

TEST_CASE("binary and CSV envelope persistence") {
  const SignalGrid grid(256, 50e9);
  const ComplexEnvelope x = random_envelope(grid, 6);
  const auto dir = std::filesystem::temp_directory_path() / "tlens_test_signal";
  std::filesystem::create_directories(dir);

  const auto bin = dir / "env.tlf";
  write_envelope(bin, x);
  const ComplexEnvelope back = read_envelope(bin);
  REQUIRE(back.size() == x.size());
  CHECK(back.grid.sample_rate_hz == x.grid.sample_rate_hz);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.samples[i] == x.samples[i]);

  write_envelope_csv(dir / "env.csv", x);
  CHECK(std::filesystem::file_size(dir / "env.csv") > 0);
  CHECK_THROWS_AS(read_envelope(dir / "missing.tlf"), IoError);
}
