#include "tlens/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>

#include "tlens/rng.hpp"

namespace tlens {

void ConstraintSet::validate() const {
  if (drive_bandwidth_hz && !(*drive_bandwidth_hz > 0.0))
    throw ValidationError("ConstraintSet: drive_bandwidth_hz must be positive");
  if (max_swing_radians && !(*max_swing_radians > 0.0))
    throw ValidationError("ConstraintSet: max_swing_radians must be positive");
  if (dac_bits) {
    if (*dac_bits < 1 || *dac_bits > 30)
      throw ValidationError("ConstraintSet: dac_bits must be in [1, 30]");
    if (!max_swing_radians)
      throw ValidationError("ConstraintSet: dac_bits requires max_swing_radians");
  }
}

void OptimizerConfig::validate() const {
  if (max_iterations < 1) throw ValidationError("OptimizerConfig: max_iterations must be >= 1");
  if (!(convergence_tolerance > 0.0))
    throw ValidationError("OptimizerConfig: convergence_tolerance must be positive");
  if (!(step_size > 0.0 && step_size <= 1.0))
    throw ValidationError("OptimizerConfig: step_size must be in (0, 1]");
  if (threads < 1) throw ValidationError("OptimizerConfig: threads must be >= 1");
  constraints.validate();
}

ChannelPair ChannelPair::make(std::vector<ComplexEnvelope> inputs,
                              std::vector<ComplexEnvelope> targets) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw ValidationError("ChannelPair: need equally many inputs and targets (>= 1)");
  for (std::size_t i = 1; i < inputs.size(); ++i)
    require_same_grid(inputs[0].grid, inputs[i].grid, "ChannelPair");
  for (const ComplexEnvelope& t : targets)
    require_same_grid(inputs[0].grid, t.grid, "ChannelPair");
  auto normalize = [](ComplexEnvelope& env) {
    const double e = env.energy();
    if (!(e > 0.0)) throw ValidationError("ChannelPair: zero-energy field");
    const double s = 1.0 / std::sqrt(e);
    for (cplx& v : env.samples) v *= s;
  };
  for (ComplexEnvelope& e : inputs) normalize(e);
  for (ComplexEnvelope& e : targets) normalize(e);
  return ChannelPair{std::move(inputs), std::move(targets)};
}

std::pair<ComplexEnvelope, cplx> stage_overlap(const ComplexEnvelope& forward_k,
                                               const ComplexEnvelope& backward_k,
                                               const PhaseMask& mask) {
  require_same_grid(forward_k.grid, backward_k.grid, "stage_overlap");
  require_same_grid(forward_k.grid, mask.grid, "stage_overlap");
  ComplexEnvelope o(forward_k.grid);
  cplx total(0.0, 0.0);
  for (std::size_t i = 0; i < o.size(); ++i) {
    const cplx rot(std::cos(mask.phase[i]), std::sin(mask.phase[i]));
    o.samples[i] = forward_k.samples[i] * std::conj(backward_k.samples[i]) * rot;
    total += o.samples[i];
  }
  return {std::move(o), total};
}

PhaseMask phase_update(const ComplexEnvelope& o_k) {
  cplx total(0.0, 0.0);
  double total_abs = 0.0;
  for (const cplx& v : o_k.samples) {
    total += v;
    total_abs += std::abs(v);
  }
  if (!(total_abs > 0.0) || std::abs(total) < 1e-12 * total_abs)
    throw DegenerateOverlapError("phase_update: overlap has no usable mean phase");
  const double phase_ref = std::arg(total);
  const cplx deref(std::cos(-phase_ref), std::sin(-phase_ref));
  PhaseMask delta(o_k.grid);
  for (std::size_t i = 0; i < o_k.size(); ++i)
    delta.phase[i] = -std::arg(o_k.samples[i] * deref);
  return delta;
}

namespace {

// Quantizer levels: -S/2 + k * S/(2^bits - 1), k in [0, 2^bits).
struct Quantizer {
  double lo;
  double step;
  long max_index;

  Quantizer(int bits, double swing)
      : lo(-swing / 2.0),
        step(swing / static_cast<double>((1l << bits) - 1)),
        max_index((1l << bits) - 1) {}

  double snap(double x) const {
    long k = static_cast<long>(std::floor((x - lo) / step + 0.5));  // ties up
    k = std::max(0l, std::min(max_index, k));
    return lo + static_cast<double>(k) * step;
  }
};

bool constraints_satisfied(const PhaseMask& mask, const ConstraintSet& cs) {
  const double eps = 1e-12;
  if (cs.dac_bits) {
    const Quantizer q(*cs.dac_bits, *cs.max_swing_radians);
    for (double v : mask.phase)
      if (std::abs(v - q.snap(v)) > eps) return false;
    return true;  // on-level values are inside the swing by construction
  }
  if (cs.max_swing_radians) {
    const double half = *cs.max_swing_radians / 2.0;
    for (double v : mask.phase)
      if (std::abs(v) > half + eps) return false;
  }
  if (cs.drive_bandwidth_hz &&
      *cs.drive_bandwidth_hz < mask.grid.sample_rate_hz / 2.0) {
    ComplexEnvelope env(mask.grid);
    for (std::size_t i = 0; i < env.size(); ++i) env.samples[i] = cplx(mask.phase[i], 0.0);
    const ComplexEnvelope spec = to_spectrum(env);
    double total = 0.0, outside = 0.0;
    for (std::size_t m = 0; m < spec.size(); ++m) {
      const double p = std::norm(spec.samples[m]);
      total += p;
      if (std::abs(mask.grid.frequency_at(m)) > *cs.drive_bandwidth_hz) outside += p;
    }
    if (outside > 1e-24 * total) return false;
  }
  return true;
}

}  // namespace

PhaseMask apply_constraints(const PhaseMask& mask, const ConstraintSet& constraints,
                            const SignalGrid& grid) {
  constraints.validate();
  require_same_grid(mask.grid, grid, "apply_constraints");
  mask.require_finite("apply_constraints");
  if (constraints.empty()) return mask;
  // Feasible masks pass through untouched; this is what makes the
  // projection idempotent even though low-pass and quantization do not
  // commute.
  if (constraints_satisfied(mask, constraints)) return mask;

  PhaseMask out = mask;

  if (constraints.drive_bandwidth_hz) {
    if (*constraints.drive_bandwidth_hz >= grid.sample_rate_hz / 2.0) {
      std::fprintf(stderr,
                   "apply_constraints: drive bandwidth %.3g Hz is at or above "
                   "Nyquist; constraint is vacuous\n",
                   *constraints.drive_bandwidth_hz);
    } else {
      ComplexEnvelope env(grid);
      for (std::size_t i = 0; i < env.size(); ++i) env.samples[i] = cplx(out.phase[i], 0.0);
      ComplexEnvelope spec = to_spectrum(env);
      for (std::size_t m = 0; m < spec.size(); ++m)
        if (std::abs(grid.frequency_at(m)) > *constraints.drive_bandwidth_hz)
          spec.samples[m] = cplx(0.0, 0.0);
      const ComplexEnvelope filtered = to_time(spec);
      for (std::size_t i = 0; i < out.phase.size(); ++i)
        out.phase[i] = filtered.samples[i].real();
    }
  }

  if (constraints.max_swing_radians) {
    const double half = *constraints.max_swing_radians / 2.0;
    for (double& v : out.phase) v = std::clamp(v, -half, half);
  }

  if (constraints.dac_bits) {
    const Quantizer q(*constraints.dac_bits, *constraints.max_swing_radians);
    for (double& v : out.phase) v = q.snap(v);
  }

  return out;
}

namespace {

ComplexEnvelope stage_forward(const ComplexEnvelope& env, const CascadeDesign& design,
                              std::size_t k) {
  ComplexEnvelope after = apply_mask(env, design.stages[k].mask, Direction::forward);
  if (design.filter_active(k))
    after = apply_filter(after, design.stages[k].filter, Direction::forward);
  return after;
}

void require_unit_energy(const ComplexEnvelope& env, const char* what) {
  if (std::abs(env.energy() - 1.0) > 1e-6)
    throw ValidationError(std::string(what) + " must have unit energy");
}

class Sweeper {
public:
  Sweeper(const std::vector<ComplexEnvelope>& inputs,
          const std::vector<ComplexEnvelope>& targets, CascadeDesign& design,
          const OptimizerConfig& cfg)
      : inputs_(inputs), targets_(targets), design_(design), cfg_(cfg),
        n_(inputs.size()) {}

  // One full sweep over all stages; returns |Tr O| / n under the updated masks.
  double sweep(bool ascending) { return ascending ? sweep_ascending() : sweep_descending(); }

  // Per-stage n x n overlap matrices for the current (fixed) masks.
  std::vector<std::vector<cplx>> overlap_matrices() {
    const std::size_t num_stages = design_.num_stages();
    auto fwd = forward_planes();
    auto bwd = backward_planes();
    std::vector<std::vector<cplx>> matrices(num_stages);
    for (std::size_t k = 0; k < num_stages; ++k) {
      matrices[k].resize(n_ * n_);
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < n_; ++j)
          matrices[k][i * n_ + j] =
              stage_overlap(fwd[k][i], bwd[k][j], design_.stages[k].mask).second;
    }
    return matrices;
  }

private:
  // Map fn over channels, possibly in parallel; results land in per-channel
  // slots so reductions stay in channel order and are bit-reproducible.
  template <typename Fn>
  void for_channels(Fn&& fn) {
    if (cfg_.threads <= 1 || n_ == 1) {
      for (std::size_t i = 0; i < n_; ++i) fn(i);
      return;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i)
      futures.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    for (auto& f : futures) f.get();
  }

  // Backward fields at the plane between each stage's mask and filter,
  // indexed [stage][channel]; valid for the current masks.
  std::vector<std::vector<ComplexEnvelope>> backward_planes() {
    const std::size_t num_stages = design_.num_stages();
    std::vector<std::vector<ComplexEnvelope>> planes(
        num_stages, std::vector<ComplexEnvelope>(n_));
    for_channels([&](std::size_t i) {
      ComplexEnvelope env = targets_[i];
      for (std::size_t k = num_stages; k-- > 0;) {
        if (design_.filter_active(k))
          env = apply_filter(env, design_.stages[k].filter, Direction::backward);
        planes[k][i] = env;
        env = apply_mask(env, design_.stages[k].mask, Direction::backward);
      }
    });
    return planes;
  }

  // Forward fields arriving before each stage's mask, indexed [stage][channel].
  std::vector<std::vector<ComplexEnvelope>> forward_planes() {
    const std::size_t num_stages = design_.num_stages();
    std::vector<std::vector<ComplexEnvelope>> planes(
        num_stages, std::vector<ComplexEnvelope>(n_));
    for_channels([&](std::size_t i) {
      ComplexEnvelope env = inputs_[i];
      for (std::size_t k = 0; k < num_stages; ++k) {
        planes[k][i] = env;
        env = stage_forward(env, design_, k);
      }
    });
    return planes;
  }

  void update_mask(std::size_t k, const std::vector<ComplexEnvelope>& fwd,
                   const std::vector<ComplexEnvelope>& bwd) {
    PhaseMask& mask = design_.stages[k].mask;
    ComplexEnvelope o_sum(design_.grid);
    for (std::size_t i = 0; i < n_; ++i) {
      const ComplexEnvelope o = stage_overlap(fwd[i], bwd[i], mask).first;
      for (std::size_t t = 0; t < o_sum.size(); ++t) o_sum.samples[t] += o.samples[t];
    }
    const PhaseMask delta = phase_update(o_sum);
    for (std::size_t t = 0; t < mask.phase.size(); ++t)
      mask.phase[t] += cfg_.step_size * delta.phase[t];
    if (!cfg_.constraints.empty() && cfg_.constraints_in_loop) {
      if (cfg_.constraints.max_swing_radians) {
        // A constant phase offset is a global phase; recenter so the swing
        // window is used symmetrically.
        double mean = 0.0;
        for (double v : mask.phase) mean += v;
        mean /= static_cast<double>(mask.phase.size());
        for (double& v : mask.phase) v -= mean;
      }
      mask = apply_constraints(mask, cfg_.constraints, design_.grid);
    }
  }

  double sweep_ascending() {
    auto bwd = backward_planes();
    std::vector<ComplexEnvelope> fwd(inputs_.begin(), inputs_.end());
    for (std::size_t k = 0; k < design_.num_stages(); ++k) {
      update_mask(k, fwd, bwd[k]);
      for_channels([&](std::size_t i) { fwd[i] = stage_forward(fwd[i], design_, k); });
    }
    cplx trace(0.0, 0.0);
    for (std::size_t i = 0; i < n_; ++i) trace += inner_product(fwd[i], targets_[i]);
    return std::abs(trace) / static_cast<double>(n_);
  }

  double sweep_descending() {
    auto fwd = forward_planes();
    std::vector<ComplexEnvelope> bwd(targets_.begin(), targets_.end());
    for (std::size_t k = design_.num_stages(); k-- > 0;) {
      for_channels([&](std::size_t i) {
        if (design_.filter_active(k))
          bwd[i] = apply_filter(bwd[i], design_.stages[k].filter, Direction::backward);
      });
      update_mask(k, fwd[k], bwd);
      for_channels([&](std::size_t i) {
        bwd[i] = apply_mask(bwd[i], design_.stages[k].mask, Direction::backward);
      });
    }
    cplx trace(0.0, 0.0);
    for (std::size_t i = 0; i < n_; ++i) trace += inner_product(inputs_[i], bwd[i]);
    return std::abs(trace) / static_cast<double>(n_);
  }

  const std::vector<ComplexEnvelope>& inputs_;
  const std::vector<ComplexEnvelope>& targets_;
  CascadeDesign& design_;
  const OptimizerConfig& cfg_;
  std::size_t n_;
};

std::pair<CascadeDesign, OverlapReport> run_wavefront_matching(
    const std::vector<ComplexEnvelope>& inputs, const std::vector<ComplexEnvelope>& targets,
    CascadeDesign design, const OptimizerConfig& cfg) {
  cfg.validate();
  design.validate();
  for (const ComplexEnvelope& e : inputs) {
    require_same_grid(e.grid, design.grid, "optimize");
    require_unit_energy(e, "optimize: input");
  }
  for (const ComplexEnvelope& e : targets) {
    require_same_grid(e.grid, design.grid, "optimize");
    require_unit_energy(e, "optimize: target");
  }

  if (cfg.random_init) {
    Philox4x32 rng(cfg.seed, "mask-init");
    for (StagePlan& stage : design.stages)
      for (double& v : stage.mask.phase)
        v += cfg.random_init_amplitude * (2.0 * rng.next_uniform53() - 1.0);
  }

  Sweeper sweeper(inputs, targets, design, cfg);
  OverlapReport report;
  report.num_channels = inputs.size();
  std::vector<double> history;
  bool converged = false;
  int sweeps = 0;
  double prev = -1.0;
  // Best-so-far masks: constrained runs can oscillate around a plateau,
  // and the returned design must be the best visited, not the last.
  double best_obj = -1.0;
  std::vector<PhaseMask> best_masks;
  for (int s = 0; s < cfg.max_iterations; ++s) {
    const bool ascending = cfg.sweep_order == SweepOrder::ascending ||
                           (cfg.sweep_order == SweepOrder::alternating && s % 2 == 0);
    const double obj = sweeper.sweep(ascending);
    history.push_back(obj);
    ++sweeps;
    if (obj > best_obj) {
      best_obj = obj;
      best_masks.clear();
      for (const StagePlan& st : design.stages) best_masks.push_back(st.mask);
    }
    if (s >= 1 && std::abs(obj - prev) < cfg.convergence_tolerance * std::max(prev, 1e-300)) {
      converged = true;
      break;
    }
    prev = obj;
  }
  if (!best_masks.empty() && best_obj > history.back())
    for (std::size_t k = 0; k < design.stages.size(); ++k)
      design.stages[k].mask = std::move(best_masks[k]);

  // post-hoc schedule: a single projection after the sweeps
  if (!cfg.constraints.empty() && !cfg.constraints_in_loop) {
    for (StagePlan& stage : design.stages) {
      if (cfg.constraints.max_swing_radians) {
        double mean = 0.0;
        for (double v : stage.mask.phase) mean += v;
        mean /= static_cast<double>(stage.mask.phase.size());
        for (double& v : stage.mask.phase) v -= mean;
      }
      stage.mask = apply_constraints(stage.mask, cfg.constraints, design.grid);
    }
  }

  report.converged = converged;
  report.sweeps_run = sweeps;
  report.objective_history =
      cfg.record_history ? history : std::vector<double>{history.back()};
  report.stage_overlap_matrices = sweeper.overlap_matrices();
  const std::vector<cplx>& last = report.stage_overlap_matrices.back();
  cplx trace(0.0, 0.0);
  const std::size_t n = inputs.size();
  for (std::size_t i = 0; i < n; ++i) trace += last[i * n + i];
  report.final_trace_magnitude = std::abs(trace);
  return {std::move(design), std::move(report)};
}

}  // namespace

std::pair<CascadeDesign, OverlapReport> optimize_single(const ComplexEnvelope& input,
                                                        const ComplexEnvelope& target,
                                                        CascadeDesign design,
                                                        const OptimizerConfig& cfg) {
  return run_wavefront_matching({input}, {target}, std::move(design), cfg);
}

std::pair<CascadeDesign, OverlapReport> optimize_multi(const ChannelPair& channels,
                                                       CascadeDesign design,
                                                       const OptimizerConfig& cfg) {
  if (channels.num_channels() < 2)
    throw ValidationError("optimize_multi: needs at least two channels");
  return run_wavefront_matching(channels.inputs, channels.targets, std::move(design), cfg);
}

}  // namespace tlens
