#include "tlens/propagation.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace tlens {

PhaseMask::PhaseMask(const SignalGrid& g, std::vector<double> p)
    : grid(g), phase(std::move(p)) {
  if (phase.size() != grid.num_samples)
    throw ValidationError("PhaseMask: phase.length != grid.num_samples");
}

void PhaseMask::require_finite(const char* where) const {
  for (double v : phase)
    if (!std::isfinite(v)) throw ValidationError(std::string(where) + ": non-finite phase");
}

SpectralFilter SpectralFilter::quadratic(double dispersion_ps_per_nm,
                                         double reference_wavelength_nm) {
  SpectralFilter f;
  f.kind = FilterKind::quadratic_dispersion;
  f.dispersion_ps_per_nm = dispersion_ps_per_nm;
  f.reference_wavelength_nm = reference_wavelength_nm;
  return f;
}

SpectralFilter SpectralFilter::tabulated_phase(std::vector<double> phase_radians) {
  SpectralFilter f;
  f.kind = FilterKind::tabulated;
  f.phase_table = std::move(phase_radians);
  return f;
}

std::vector<double> SpectralFilter::spectral_phase(const SignalGrid& grid) const {
  if (kind == FilterKind::tabulated) {
    if (phase_table.size() != grid.num_samples)
      throw ValidationError("SpectralFilter: tabulated filter length mismatch");
    return phase_table;
  }
  // D in s/m from ps/nm; quadratic coefficient D*lambda0^2/(4*pi*c).
  const double d_si = dispersion_ps_per_nm * 1e-3;
  const double lambda0 = reference_wavelength_nm * 1e-9;
  const double coeff = d_si * lambda0 * lambda0 / (4.0 * M_PI * kSpeedOfLight);
  std::vector<double> phase(grid.num_samples);
  for (std::size_t m = 0; m < grid.num_samples; ++m) {
    const double omega = 2.0 * M_PI * grid.frequency_at(m);
    phase[m] = coeff * omega * omega;
  }
  return phase;
}

CascadeDesign CascadeDesign::uniform(const SignalGrid& grid, std::size_t num_stages,
                                     const SpectralFilter& filter,
                                     std::vector<double> channel_offsets_hz) {
  CascadeDesign d;
  d.grid = grid;
  d.stages.assign(num_stages, StagePlan{PhaseMask(grid), filter});
  d.channel_offsets_hz = std::move(channel_offsets_hz);
  d.validate();
  return d;
}

void CascadeDesign::validate() const {
  if (stages.empty()) throw ValidationError("CascadeDesign: needs at least one stage");
  if (channel_offsets_hz.empty())
    throw ValidationError("CascadeDesign: needs at least one channel offset");
  for (const StagePlan& s : stages) {
    if (!(s.mask.grid == grid))
      throw ValidationError("CascadeDesign: stage mask grid differs from cascade grid");
    if (s.filter.kind == FilterKind::tabulated &&
        s.filter.phase_table.size() != grid.num_samples)
      throw ValidationError("CascadeDesign: tabulated filter length mismatch");
  }
  std::set<double> distinct(channel_offsets_hz.begin(), channel_offsets_hz.end());
  if (distinct.size() != channel_offsets_hz.size())
    throw ValidationError("CascadeDesign: channel offsets must be distinct");
  for (double off : channel_offsets_hz)
    if (std::abs(off) >= grid.sample_rate_hz / 2.0)
      throw ValidationError("CascadeDesign: channel offset at or beyond Nyquist");
}

ComplexEnvelope apply_mask(const ComplexEnvelope& env, const PhaseMask& mask,
                           Direction direction) {
  require_same_grid(env.grid, mask.grid, "apply_mask");
  mask.require_finite("apply_mask");
  const double sign = direction == Direction::forward ? 1.0 : -1.0;
  ComplexEnvelope out(env.grid);
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double ph = sign * mask.phase[i];
    out.samples[i] = env.samples[i] * cplx(std::cos(ph), std::sin(ph));
  }
  return out;
}

ComplexEnvelope apply_filter(const ComplexEnvelope& env, const SpectralFilter& filter,
                             Direction direction) {
  const std::vector<double> phase = filter.spectral_phase(env.grid);
  const double sign = direction == Direction::forward ? 1.0 : -1.0;
  ComplexEnvelope spec = to_spectrum(env);
  for (std::size_t m = 0; m < spec.size(); ++m) {
    const double ph = sign * phase[m];
    spec.samples[m] *= cplx(std::cos(ph), std::sin(ph));
  }
  return to_time(spec);
}

PropagationResult propagate_forward(const ComplexEnvelope& input,
                                    const CascadeDesign& design, bool keep_trace) {
  require_same_grid(input.grid, design.grid, "propagate_forward");
  PropagationResult result;
  if (keep_trace) result.trace.emplace();
  ComplexEnvelope field = input;
  for (std::size_t k = 0; k < design.num_stages(); ++k) {
    ComplexEnvelope after_mask = apply_mask(field, design.stages[k].mask, Direction::forward);
    ComplexEnvelope after_filter =
        design.filter_active(k)
            ? apply_filter(after_mask, design.stages[k].filter, Direction::forward)
            : after_mask;
    if (keep_trace)
      result.trace->stages.push_back({std::move(field), after_mask, after_filter});
    field = std::move(after_filter);
  }
  result.field = std::move(field);
  return result;
}

PropagationResult propagate_backward(const ComplexEnvelope& target,
                                     const CascadeDesign& design, bool keep_trace) {
  require_same_grid(target.grid, design.grid, "propagate_backward");
  PropagationResult result;
  if (keep_trace) {
    result.trace.emplace();
    result.trace->stages.resize(design.num_stages());
  }
  ComplexEnvelope field = target;
  for (std::size_t k = design.num_stages(); k-- > 0;) {
    // Stored in forward orientation: the incoming field sits after the
    // stage's filter, the intermediate one between mask and filter.
    ComplexEnvelope between =
        design.filter_active(k)
            ? apply_filter(field, design.stages[k].filter, Direction::backward)
            : field;
    ComplexEnvelope before = apply_mask(between, design.stages[k].mask, Direction::backward);
    if (keep_trace)
      result.trace->stages[k] = {before, std::move(between), std::move(field)};
    field = std::move(before);
  }
  result.field = std::move(field);
  return result;
}

// --- persistence ------------------------------------------------------

namespace {

nlohmann::json grid_to_json(const SignalGrid& g) {
  return {{"num_samples", g.num_samples},
          {"sample_rate_hz", g.sample_rate_hz},
          {"center_frequency_offset_hz", g.center_frequency_offset_hz}};
}

SignalGrid grid_from_json(const nlohmann::json& j) {
  return SignalGrid(j.at("num_samples").get<std::size_t>(),
                    j.at("sample_rate_hz").get<double>(),
                    j.value("center_frequency_offset_hz", 0.0));
}

nlohmann::json filter_to_json(const SpectralFilter& f) {
  nlohmann::json j;
  j["kind"] = f.kind == FilterKind::quadratic_dispersion ? "quadratic_dispersion" : "tabulated";
  j["dispersion_ps_per_nm"] = f.dispersion_ps_per_nm;
  j["reference_wavelength_nm"] = f.reference_wavelength_nm;
  if (f.kind == FilterKind::tabulated) j["phase_table"] = f.phase_table;
  return j;
}

SpectralFilter filter_from_json(const nlohmann::json& j) {
  SpectralFilter f;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "quadratic_dispersion") {
    f.kind = FilterKind::quadratic_dispersion;
    f.dispersion_ps_per_nm = j.at("dispersion_ps_per_nm").get<double>();
    f.reference_wavelength_nm = j.value("reference_wavelength_nm", 1550.0);
  } else if (kind == "tabulated") {
    f.kind = FilterKind::tabulated;
    f.phase_table = j.at("phase_table").get<std::vector<double>>();
  } else {
    throw ValidationError("SpectralFilter: unknown kind '" + kind + "'");
  }
  return f;
}

}  // namespace

void save_design(const CascadeDesign& design, const std::filesystem::path& json_path) {
  design.validate();
  const std::filesystem::path dir = json_path.parent_path();
  nlohmann::json j;
  j["grid"] = grid_to_json(design.grid);
  j["channel_offsets_hz"] = design.channel_offsets_hz;
  j["final_stage_filter"] = design.final_stage_filter;
  j["stages"] = nlohmann::json::array();
  for (std::size_t k = 0; k < design.num_stages(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "mask_%02zu.tlf", k);
    ComplexEnvelope mask_env(design.grid);
    for (std::size_t i = 0; i < mask_env.size(); ++i)
      mask_env.samples[i] = cplx(design.stages[k].mask.phase[i], 0.0);
    write_envelope(dir / name, mask_env);
    j["stages"].push_back(
        {{"mask_file", name}, {"filter", filter_to_json(design.stages[k].filter)}});
  }
  std::ofstream out(json_path);
  if (!out) throw IoError("save_design: cannot open " + json_path.string());
  out << j.dump(2) << '\n';
}

CascadeDesign load_design(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("load_design: cannot open " + json_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_design: bad JSON in " + json_path.string() + ": " + e.what());
  }
  const std::filesystem::path dir = json_path.parent_path();
  CascadeDesign design;
  design.grid = grid_from_json(j.at("grid"));
  design.channel_offsets_hz = j.at("channel_offsets_hz").get<std::vector<double>>();
  design.final_stage_filter = j.value("final_stage_filter", true);
  for (const auto& js : j.at("stages")) {
    StagePlan plan;
    plan.filter = filter_from_json(js.at("filter"));
    const ComplexEnvelope mask_env =
        read_envelope(dir / js.at("mask_file").get<std::string>());
    // The binary format carries no center offset; match on size and rate.
    if (mask_env.grid.num_samples != design.grid.num_samples ||
        mask_env.grid.sample_rate_hz != design.grid.sample_rate_hz)
      throw ValidationError("load_design: mask grid differs from design grid");
    std::vector<double> phase(mask_env.size());
    for (std::size_t i = 0; i < phase.size(); ++i) phase[i] = mask_env.samples[i].real();
    plan.mask = PhaseMask(design.grid, std::move(phase));
    design.stages.push_back(std::move(plan));
  }
  design.validate();
  return design;
}

}  // namespace tlens
