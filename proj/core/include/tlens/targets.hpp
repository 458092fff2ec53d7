// Input seeds (CW line, multi-line comb) and target waveforms (RRC-shaped
// OOK and QPSK with seeded random data).
//
// Symbol sequences are circular: the distinct pattern of num_symbols
// symbols is tiled to fill the grid window exactly, so the window must
// hold an integer multiple of the pattern (duration * baud_rate symbols
// in total). Synthesis is frequency-domain and therefore exact for the
// periodic sequence: the pattern DFT lands on grid bins spaced 1/duration
// apart and is shaped by the RRC response.
//
// QPSK Gray mapping (bits b1 b0): 00 -> (1+j)/sqrt2, 01 -> (-1+j)/sqrt2,
// 11 -> (-1-j)/sqrt2, 10 -> (1-j)/sqrt2. OOK zeros are true zeros.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tlens/signal.hpp"

namespace tlens {

enum class ModulationFormat { ook, qpsk };

struct ModulationSpec {
  ModulationFormat format = ModulationFormat::qpsk;
  double baud_rate = 15e9;       // symbols/s
  double rrc_rolloff = 0.01;     // in [0, 1]
  std::size_t num_symbols = 512;  // distinct pattern length
  std::uint64_t data_seed = 1;
  bool unit_energy = true;
  // OOK only: long zero runs need many stages to form; when set, every
  // run of zeros longer than this (circularly) gets a forced one.
  std::optional<std::size_t> max_zero_run;

  // Throws unless the spec fits the grid: per-channel bandwidth within
  // Nyquist and window = integer multiple of the pattern duration.
  void validate(const SignalGrid& grid) const;

  // Symbols in the full window (pattern tiled), i.e. duration*baud many.
  std::size_t window_symbols(const SignalGrid& grid) const;
};

struct CombSpec {
  std::size_t num_lines = 3;
  double line_spacing_hz = 33e9;
  std::vector<double> weights;  // per-line power weights, default equal

  // Line offsets centered on zero detuning: (i - (n-1)/2) * spacing.
  std::vector<double> offsets_hz() const;
};

// Root-raised-cosine magnitude response sampled on the grid's frequency
// bins; unit passband, zero beyond (1+rolloff)*baud/2.
std::vector<double> rrc_filter_response(double rolloff, double baud,
                                        const SignalGrid& grid);

// Pattern of num_symbols data symbols drawn from the seeded stream
// "symbols" (OOK: {0,1} equiprobable; QPSK: Gray-labeled (+-1+-j)/sqrt2).
std::vector<cplx> draw_symbols(const ModulationSpec& spec);

// Builds the RRC-shaped waveform for an explicit symbol pattern (tiled to
// fill the window), shifted to offset_hz and normalized to unit energy.
// offset_hz must be bin-aligned so the shift is an exact spectral rotate.
ComplexEnvelope synthesize_waveform(const std::vector<cplx>& pattern,
                                    const ModulationSpec& spec, const SignalGrid& grid,
                                    double offset_hz);

struct TargetWaveform {
  ComplexEnvelope envelope;
  std::vector<cplx> symbols;  // distinct pattern (ground truth)
};

TargetWaveform synthesize_target(const ModulationSpec& spec, const SignalGrid& grid,
                                 double offset_hz);

// n unit-energy CW tones at the comb offsets; mutually orthogonal on the
// grid (offsets must be bin-aligned).
std::vector<ComplexEnvelope> synthesize_comb_input(const CombSpec& spec,
                                                   const SignalGrid& grid);

// Unit-energy CW line at zero detuning.
ComplexEnvelope cw_input(const SignalGrid& grid);

// Receiver-side helper: matched RRC filter, then evaluate the field at the
// symbol instants t_m = m/baud (m over the whole window). Spectral
// evaluation, exact for band-limited circular waveforms. delay_samples
// shifts the sampling comb by a (possibly fractional) number of samples.
std::vector<cplx> matched_filter_symbols(const ComplexEnvelope& env,
                                         const ModulationSpec& spec, double offset_hz,
                                         double delay_samples = 0.0);

// Ground-truth CSV: header "index,re,im".
void write_symbols_csv(const std::filesystem::path& path, const std::vector<cplx>& symbols);

}  // namespace tlens
