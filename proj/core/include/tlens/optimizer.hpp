// Phase-mask design by wavefront matching: the input field is propagated
// forward and the target field backward through the cascade, and each
// stage's temporal phase is updated to align the two, sweeping over the
// stages until the overlap stops improving.
//
// At stage k the overlap waveform is
//     o_k(t) = f_k(t) * conj(b_k(t)) * exp(j*Phi_k(t))
// with f_k the forward field arriving before the stage's mask and b_k the
// backward field between the stage's mask and filter. The stage update is
//     dPhi_k(t) = -arg[o_k(t) * exp(-j*phase_ref)],
// phase_ref = arg(sum_t o_k(t)), i.e. the energy-weighted circular mean
// phase, which makes the update invariant to a global phase on the target.
// After the update all samples of o_k share phase_ref, so the overlap
// magnitude cannot decrease: unconstrained sweeps are monotone.
//
// Multi-channel designs sum the per-channel overlap waveforms (diagonal,
// input i paired with target i) before the update; the full n x n overlap
// matrices are computed for reporting.
//
// Sweeps reuse fields incrementally: an ascending sweep precomputes the
// backward fields (which depend only on the not-yet-updated later masks)
// and walks the forward field through the freshly updated stages, so every
// update sees exactly the fields a from-scratch recomputation would give.
// Descending sweeps mirror this with precomputed forward fields.
//
// Termination: a sweep whose relative objective change is below the
// tolerance, or max_iterations (quantized constraint sets typically end
// here: the projection puts the objective into a small limit cycle that
// never meets the sweep-to-sweep tolerance). Either way the returned
// design carries the best masks visited, and the report's converged flag
// records which exit fired.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tlens/propagation.hpp"

namespace tlens {

struct DegenerateOverlapError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SweepOrder { ascending, descending, alternating };

struct ConstraintSet {
  std::optional<double> drive_bandwidth_hz;  // low-pass cutoff for mask waveforms
  std::optional<int> dac_bits;               // quantizer resolution
  std::optional<double> max_swing_radians;   // peak-to-peak phase window

  bool empty() const { return !drive_bandwidth_hz && !dac_bits && !max_swing_radians; }
  void validate() const;
};

struct OptimizerConfig {
  int max_iterations = 1000;             // full sweeps
  double convergence_tolerance = 1e-6;   // relative objective change per sweep
  SweepOrder sweep_order = SweepOrder::alternating;
  ConstraintSet constraints;
  bool record_history = true;
  double step_size = 1.0;                // fraction of dPhi applied
  bool constraints_in_loop = true;       // project after every stage update
  bool random_init = false;              // small random masks to break symmetry
  double random_init_amplitude = 0.05;   // radians
  std::uint64_t seed = 0;
  int threads = 1;                       // per-channel propagation parallelism

  void validate() const;
};

struct ChannelPair {
  std::vector<ComplexEnvelope> inputs;   // forward seeds f_i
  std::vector<ComplexEnvelope> targets;  // backward seeds b_j

  // Validates shapes and normalizes every field to unit energy.
  static ChannelPair make(std::vector<ComplexEnvelope> inputs,
                          std::vector<ComplexEnvelope> targets);
  std::size_t num_channels() const { return inputs.size(); }
};

struct OverlapReport {
  // Final per-stage n x n overlap matrices, row-major (entry i*n + j).
  std::vector<std::vector<cplx>> stage_overlap_matrices;
  std::vector<double> objective_history;  // |Tr O| / n after each sweep
  double final_trace_magnitude = 0.0;
  bool converged = false;
  int sweeps_run = 0;
  std::size_t num_channels = 1;
};

// o_k(t) and its time sum O_k for one stage and one channel pair.
std::pair<ComplexEnvelope, cplx> stage_overlap(const ComplexEnvelope& forward_k,
                                               const ComplexEnvelope& backward_k,
                                               const PhaseMask& mask);

// Eq-style update: mean-phase-referenced negative argument of o_k.
// Throws DegenerateOverlapError when the mean phase is undefined.
PhaseMask phase_update(const ComplexEnvelope& o_k);

// In order: brick-wall low-pass of the real phase waveform, clip to
// +-max_swing/2, quantize to 2^dac_bits levels spanning the swing
// (ties to the higher level). A mask that already satisfies every set
// constraint is returned unchanged, which makes the projection idempotent.
PhaseMask apply_constraints(const PhaseMask& mask, const ConstraintSet& constraints,
                            const SignalGrid& grid);

std::pair<CascadeDesign, OverlapReport> optimize_single(const ComplexEnvelope& input,
                                                        const ComplexEnvelope& target,
                                                        CascadeDesign design,
                                                        const OptimizerConfig& cfg);

std::pair<CascadeDesign, OverlapReport> optimize_multi(const ChannelPair& channels,
                                                       CascadeDesign design,
                                                       const OptimizerConfig& cfg);

}  // namespace tlens
