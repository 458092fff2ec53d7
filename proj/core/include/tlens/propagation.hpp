// One generalized time-lens stage (temporal phase mask followed by a
// dispersive all-pass spectral filter) and the forward/backward cascade.
//
// Dispersion sign convention: the quadratic kind realizes the spectral
// phase phi(Omega) = (D * lambda0^2 / (4*pi*c)) * Omega^2 with Omega the
// angular detuning from the grid center and D the total dispersion
// converted from ps/nm. Applied forward (exp(+j*phi)), a narrowband tone
// at detuning df acquires group delay tau = -D * lambda0^2 / c * df;
// the group-delay unit test pins this sign. Constant and linear spectral
// phase terms are zero by construction (global phase / global delay).

#pragma once

#include <optional>
#include <vector>

#include "tlens/signal.hpp"

namespace tlens {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

struct PhaseMask {
  SignalGrid grid;
  std::vector<double> phase;  // radians, unwrapped storage

  PhaseMask() = default;
  explicit PhaseMask(const SignalGrid& g) : grid(g), phase(g.num_samples, 0.0) {}
  PhaseMask(const SignalGrid& g, std::vector<double> p);

  void require_finite(const char* where) const;
};

enum class FilterKind { quadratic_dispersion, tabulated };

struct SpectralFilter {
  FilterKind kind = FilterKind::quadratic_dispersion;
  double dispersion_ps_per_nm = 0.0;
  double reference_wavelength_nm = 1550.0;
  std::vector<double> phase_table;  // radians per frequency bin (tabulated)

  static SpectralFilter quadratic(double dispersion_ps_per_nm,
                                  double reference_wavelength_nm = 1550.0);
  static SpectralFilter tabulated_phase(std::vector<double> phase_radians);

  // Spectral phase per DFT bin on the given grid.
  std::vector<double> spectral_phase(const SignalGrid& grid) const;
};

struct StagePlan {
  PhaseMask mask;
  SpectralFilter filter;
};

struct CascadeDesign {
  SignalGrid grid;
  std::vector<StagePlan> stages;
  std::vector<double> channel_offsets_hz = {0.0};
  // The cascade is mask,filter,mask,filter,...; when false the filter of
  // the last stage is skipped so the final element is a mask.
  bool final_stage_filter = true;

  static CascadeDesign uniform(const SignalGrid& grid, std::size_t num_stages,
                               const SpectralFilter& filter,
                               std::vector<double> channel_offsets_hz = {0.0});

  std::size_t num_stages() const { return stages.size(); }
  bool filter_active(std::size_t stage) const {
    return final_stage_filter || stage + 1 < stages.size();
  }
  void validate() const;
};

enum class Direction { forward, backward };

// Per-stage field evolution, stored in forward orientation for both
// propagation directions so traces of an exact design compare equal.
struct StageTrace {
  struct Fields {
    ComplexEnvelope before_mask;
    ComplexEnvelope after_mask;
    ComplexEnvelope after_filter;
  };
  std::vector<Fields> stages;
};

struct PropagationResult {
  ComplexEnvelope field;
  std::optional<StageTrace> trace;
};

// forward: sample i multiplied by exp(+j*phase_i); backward: exp(-j*phase_i).
ComplexEnvelope apply_mask(const ComplexEnvelope& env, const PhaseMask& mask,
                           Direction direction);

// to_spectrum -> multiply by exp(+/- j*phi(Omega)) -> to_time.
ComplexEnvelope apply_filter(const ComplexEnvelope& env, const SpectralFilter& filter,
                             Direction direction);

// Applies stage 1..N in order (mask then filter).
PropagationResult propagate_forward(const ComplexEnvelope& input,
                                    const CascadeDesign& design,
                                    bool keep_trace = false);

// Applies stage N..1 with inverse filter then inverse mask; exact inverse
// of propagate_forward.
PropagationResult propagate_backward(const ComplexEnvelope& target,
                                     const CascadeDesign& design,
                                     bool keep_trace = false);

// --- persistence ------------------------------------------------------
//
// design JSON: {grid, channel_offsets_hz, final_stage_filter,
// stages:[{mask_file, filter:{kind, dispersion_ps_per_nm,
// reference_wavelength_nm}}]}. Masks are stored next to the JSON in the
// binary envelope format with zero imaginary parts.
void save_design(const CascadeDesign& design, const std::filesystem::path& json_path);
CascadeDesign load_design(const std::filesystem::path& json_path);

}  // namespace tlens
