// Sampling grid and complex baseband envelope, plus the transform and
// resampling conventions every other component relies on.
//
// Conventions (fixed project-wide):
//   * Time axis: t_i = i / sample_rate, i in [0, num_samples).
//   * Frequency axis: standard DFT bin ordering. Bin m maps to physical
//     detuning f_m = m * df for m < N/2 and f_m = (m - N) * df otherwise,
//     with df = sample_rate / num_samples. Angular detuning is
//     omega_m = 2*pi*f_m, measured from the (implicit) optical carrier.
//   * Transforms are unitary (1/sqrt(N) both directions), so energy
//     sum(|x_i|^2) is preserved exactly up to rounding.
//   * to_time uses the exp(+j*2*pi*f*t) kernel: a single occupied bin at
//     detuning f yields exp(+j*2*pi*f*t) in time.
//   * Envelopes are baseband-equivalent fields; multi-carrier inputs are
//     represented as tones at +/- multiples of the line spacing.

#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace tlens {

using cplx = std::complex<double>;

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GridMismatchError : ValidationError {
  using ValidationError::ValidationError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SignalGrid {
  std::size_t num_samples = 0;
  double sample_rate_hz = 0.0;
  double center_frequency_offset_hz = 0.0;  // bookkeeping only

  SignalGrid() = default;
  SignalGrid(std::size_t n, double fs, double center_offset = 0.0);

  double duration_s() const { return static_cast<double>(num_samples) / sample_rate_hz; }
  double bin_spacing_hz() const { return sample_rate_hz / static_cast<double>(num_samples); }
  double time_at(std::size_t i) const { return static_cast<double>(i) / sample_rate_hz; }

  // Physical detuning of DFT bin m (negative for the upper half).
  double frequency_at(std::size_t bin) const;

  bool operator==(const SignalGrid& o) const {
    return num_samples == o.num_samples && sample_rate_hz == o.sample_rate_hz &&
           center_frequency_offset_hz == o.center_frequency_offset_hz;
  }
};

struct ComplexEnvelope {
  SignalGrid grid;
  std::vector<cplx> samples;

  ComplexEnvelope() = default;
  explicit ComplexEnvelope(const SignalGrid& g) : grid(g), samples(g.num_samples) {}
  ComplexEnvelope(const SignalGrid& g, std::vector<cplx> s);

  std::size_t size() const { return samples.size(); }
  double energy() const;
};

void require_same_grid(const SignalGrid& a, const SignalGrid& b, const char* where);

// Unitary discrete frequency transform and its exact inverse.
ComplexEnvelope to_spectrum(const ComplexEnvelope& env);
ComplexEnvelope to_time(const ComplexEnvelope& spec);

// sum_i a_i * conj(b_i). The optimizer composes its own conjugation; this
// fixes the a.b* convention once.
cplx inner_product(const ComplexEnvelope& a, const ComplexEnvelope& b);

// Multiplies by exp(+j*2*pi*shift*t). Throws on |shift| >= Nyquist.
ComplexEnvelope frequency_shift(const ComplexEnvelope& env, double shift_hz);

// --- persistence ------------------------------------------------------
//
// Binary layout (little-endian): magic "TLF1", u32 num_samples,
// f64 sample_rate, then num_samples interleaved (f64 re, f64 im) pairs.
void write_envelope(const std::filesystem::path& path, const ComplexEnvelope& env);
ComplexEnvelope read_envelope(const std::filesystem::path& path);

// CSV with header "time_s,re,im".
void write_envelope_csv(const std::filesystem::path& path, const ComplexEnvelope& env);

}  // namespace tlens
