// Design/measurement quality metrics and the receiver-side processing
// chain with optional impairment injection.
//
// The correlation metric is the complex-field correlation maximized over
// circular delay and global phase:
//     corr = max_lag | sum_i m_i+lag * conj(r_i) | / (||m|| * ||r||),
// which is invariant to global scaling, global phase, and circular delay
// of either argument. best_lag is how many samples the measured waveform
// lags the reference; best_phase is the rotation that, applied to the
// lag-aligned measured waveform, best matches the reference.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tlens/signal.hpp"
#include "tlens/targets.hpp"

namespace tlens {

struct ImpairmentSpec {
  // AOM shift: delta_f = base + stage_index * per_stage, applied when
  // aom_stage_index is set.
  double aom_base_shift_hz = 350e6;
  double aom_per_stage_shift_hz = 200e6;
  std::optional<int> aom_stage_index;
  std::optional<double> awgn_snr_db;             // relative to signal energy
  std::optional<double> residual_lo_offset_hz;
  std::optional<double> slow_phase_drift_rad_per_s;

  bool empty() const {
    return !aom_stage_index && !awgn_snr_db && !residual_lo_offset_hz &&
           !slow_phase_drift_rad_per_s;
  }
  double aom_shift_hz() const {
    return aom_stage_index
               ? aom_base_shift_hz + static_cast<double>(*aom_stage_index) * aom_per_stage_shift_hz
               : 0.0;
  }
  void validate(const SignalGrid& grid) const;
};

struct QualityReport {
  double correlation = 0.0;   // in [0, 1]
  long best_lag = 0;          // samples, in (-N/2, N/2]
  double best_phase = 0.0;    // radians
  std::optional<double> evm_percent;
  std::vector<cplx> constellation;
};

QualityReport waveform_correlation(const ComplexEnvelope& measured,
                                   const ComplexEnvelope& reference);

// Entry (i, j) = correlation between channel waveforms i and j; symmetric
// with unit diagonal.
std::vector<std::vector<double>> cross_correlation_matrix(
    const std::vector<ComplexEnvelope>& channels);

// Deterministic per seed: AOM/LO frequency shifts, linear-in-time phase
// drift, then complex AWGN at the requested SNR.
ComplexEnvelope inject_impairments(const ComplexEnvelope& env, const ImpairmentSpec& spec,
                                   std::uint64_t seed);

enum class OffsetEstimatorMode {
  direct,        // linear fit to the unwrapped signal phase (CW-like input)
  fourth_power,  // QPSK: peak of the 4th-power spectrum + linear phase fit
};

struct FrequencyOffsetEstimate {
  double offset_hz = 0.0;
  bool confident = true;
};

FrequencyOffsetEstimate estimate_frequency_offset(
    const ComplexEnvelope& env, OffsetEstimatorMode mode = OffsetEstimatorMode::direct);

// Per block of block_len samples, rotates env by
// arg(inner_product(reference_block, env_block)); relative phases inside a
// block are untouched. Zero-energy blocks get rotation 0 and are counted
// in *zero_energy_blocks when given.
ComplexEnvelope block_phase_align(const ComplexEnvelope& env, const ComplexEnvelope& reference,
                                  std::size_t block_len = 2000,
                                  std::size_t* zero_energy_blocks = nullptr);

struct CpeResult {
  ComplexEnvelope env;
  bool quadrant_ambiguous = false;
};

// 4th-power (Viterbi-Viterbi) carrier phase estimation for QPSK on the
// (+-1+-j)/sqrt2 constellation, whose symbols map to -1 under the 4th
// power; per block theta = arg(-sum z^4) / 4, unwrapped across blocks.
// With a reference the pi/2 quadrant amount is resolved against it,
// otherwise the result is flagged ambiguous.
CpeResult viterbi_viterbi_cpe(const ComplexEnvelope& env, std::size_t block_len,
                              const ComplexEnvelope* reference = nullptr);

// Downconvert by offset_hz (bin-aligned) and keep |f| <= half_bandwidth_hz.
ComplexEnvelope extract_channel(const ComplexEnvelope& env, double offset_hz,
                                double half_bandwidth_hz);

// Matched-filter symbol metrics of a lag/phase-aligned waveform against
// ground-truth symbols: least-squares complex gain, then
// EVM% = 100 * rms(error) / rms(reference). Constellation points are the
// scaled symbol-instant samples over the window.
struct SymbolMetrics {
  double evm_percent = 0.0;
  std::vector<cplx> constellation;
};

SymbolMetrics evaluate_symbols(const ComplexEnvelope& env, const ModulationSpec& spec,
                               double offset_hz, const std::vector<cplx>& reference_pattern,
                               double delay_samples = 0.0);

// Fraction of total power in the zero-detuning bin, in dB.
double dc_bin_power_db(const ComplexEnvelope& env);

}  // namespace tlens
