#include "tlens/job.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tlens/rng.hpp"

namespace tlens {

namespace fs = std::filesystem;
using nlohmann::json;

// --- JSON conversions ---------------------------------------------------

namespace {

json grid_to_json(const SignalGrid& g) {
  return {{"num_samples", g.num_samples},
          {"sample_rate_hz", g.sample_rate_hz},
          {"center_frequency_offset_hz", g.center_frequency_offset_hz}};
}

SignalGrid grid_from_json(const json& j) {
  return SignalGrid(j.at("num_samples").get<std::size_t>(),
                    j.at("sample_rate_hz").get<double>(),
                    j.value("center_frequency_offset_hz", 0.0));
}

json filter_to_json(const SpectralFilter& f) {
  json j;
  j["kind"] = f.kind == FilterKind::quadratic_dispersion ? "quadratic_dispersion" : "tabulated";
  j["dispersion_ps_per_nm"] = f.dispersion_ps_per_nm;
  j["reference_wavelength_nm"] = f.reference_wavelength_nm;
  if (f.kind == FilterKind::tabulated) j["phase_table"] = f.phase_table;
  return j;
}

SpectralFilter filter_from_json(const json& j) {
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
    throw ValidationError("filter: unknown kind '" + kind + "'");
  }
  return f;
}

json constraints_to_json(const ConstraintSet& c) {
  json j = json::object();
  if (c.drive_bandwidth_hz) j["drive_bandwidth_hz"] = *c.drive_bandwidth_hz;
  if (c.dac_bits) j["dac_bits"] = *c.dac_bits;
  if (c.max_swing_radians) j["max_swing_radians"] = *c.max_swing_radians;
  return j;
}

ConstraintSet constraints_from_json(const json& j) {
  ConstraintSet c;
  if (j.contains("drive_bandwidth_hz")) c.drive_bandwidth_hz = j.at("drive_bandwidth_hz").get<double>();
  if (j.contains("dac_bits")) c.dac_bits = j.at("dac_bits").get<int>();
  if (j.contains("max_swing_radians")) c.max_swing_radians = j.at("max_swing_radians").get<double>();
  return c;
}

const char* format_name(ModulationFormat f) {
  return f == ModulationFormat::ook ? "ook" : "qpsk";
}

ModulationFormat format_from_name(const std::string& s) {
  if (s == "ook") return ModulationFormat::ook;
  if (s == "qpsk") return ModulationFormat::qpsk;
  throw ValidationError("target: unknown format '" + s + "'");
}

json modulation_to_json(const ModulationSpec& m, bool with_seed) {
  json j;
  j["format"] = format_name(m.format);
  j["baud_rate"] = m.baud_rate;
  j["rrc_rolloff"] = m.rrc_rolloff;
  j["num_symbols"] = m.num_symbols;
  if (with_seed) j["data_seed"] = m.data_seed;
  j["unit_energy"] = m.unit_energy;
  if (m.max_zero_run) j["max_zero_run"] = *m.max_zero_run;
  return j;
}

ModulationSpec modulation_from_json(const json& j, bool& seed_explicit) {
  ModulationSpec m;
  m.format = format_from_name(j.at("format").get<std::string>());
  m.baud_rate = j.at("baud_rate").get<double>();
  m.rrc_rolloff = j.value("rrc_rolloff", 0.01);
  m.num_symbols = j.value("num_symbols", std::size_t{512});
  seed_explicit = j.contains("data_seed");
  if (seed_explicit) m.data_seed = j.at("data_seed").get<std::uint64_t>();
  m.unit_energy = j.value("unit_energy", true);
  if (j.contains("max_zero_run")) m.max_zero_run = j.at("max_zero_run").get<std::size_t>();
  return m;
}

const char* sweep_name(SweepOrder s) {
  switch (s) {
    case SweepOrder::ascending: return "ascending";
    case SweepOrder::descending: return "descending";
    default: return "alternating";
  }
}

SweepOrder sweep_from_name(const std::string& s) {
  if (s == "ascending") return SweepOrder::ascending;
  if (s == "descending") return SweepOrder::descending;
  if (s == "alternating") return SweepOrder::alternating;
  throw ValidationError("optimizer: unknown sweep_order '" + s + "'");
}

json optimizer_to_json(const OptimizerConfig& o) {
  json j;
  j["max_iterations"] = o.max_iterations;
  j["tolerance"] = o.convergence_tolerance;
  j["sweep_order"] = sweep_name(o.sweep_order);
  j["seed"] = o.seed;
  j["step_size"] = o.step_size;
  j["record_history"] = o.record_history;
  j["constraints_in_loop"] = o.constraints_in_loop;
  j["random_init"] = o.random_init;
  j["random_init_amplitude"] = o.random_init_amplitude;
  return j;
}

OptimizerConfig optimizer_from_json(const json& j) {
  OptimizerConfig o;
  o.max_iterations = j.value("max_iterations", 1000);
  o.convergence_tolerance = j.value("tolerance", 1e-6);
  o.sweep_order = sweep_from_name(j.value("sweep_order", std::string("alternating")));
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  o.step_size = j.value("step_size", 1.0);
  o.record_history = j.value("record_history", true);
  o.constraints_in_loop = j.value("constraints_in_loop", true);
  o.random_init = j.value("random_init", false);
  o.random_init_amplitude = j.value("random_init_amplitude", 0.05);
  return o;
}

json impairments_to_json(const ImpairmentSpec& s) {
  json j = json::object();
  j["aom_base_shift_hz"] = s.aom_base_shift_hz;
  j["aom_per_stage_shift_hz"] = s.aom_per_stage_shift_hz;
  if (s.aom_stage_index) j["aom_stage_index"] = *s.aom_stage_index;
  if (s.awgn_snr_db) j["awgn_snr_db"] = *s.awgn_snr_db;
  if (s.residual_lo_offset_hz) j["residual_lo_offset_hz"] = *s.residual_lo_offset_hz;
  if (s.slow_phase_drift_rad_per_s)
    j["slow_phase_drift_rad_per_s"] = *s.slow_phase_drift_rad_per_s;
  return j;
}

ImpairmentSpec impairments_from_json(const json& j) {
  ImpairmentSpec s;
  s.aom_base_shift_hz = j.value("aom_base_shift_hz", 350e6);
  s.aom_per_stage_shift_hz = j.value("aom_per_stage_shift_hz", 200e6);
  if (j.contains("aom_stage_index")) s.aom_stage_index = j.at("aom_stage_index").get<int>();
  if (j.contains("awgn_snr_db")) s.awgn_snr_db = j.at("awgn_snr_db").get<double>();
  if (j.contains("residual_lo_offset_hz"))
    s.residual_lo_offset_hz = j.at("residual_lo_offset_hz").get<double>();
  if (j.contains("slow_phase_drift_rad_per_s"))
    s.slow_phase_drift_rad_per_s = j.at("slow_phase_drift_rad_per_s").get<double>();
  return s;
}

json job_to_json(const JobSpec& spec) {
  json j;
  j["schema"] = kSchemaVersion;
  j["name"] = spec.name;
  j["grid"] = grid_to_json(spec.grid);
  j["cascade"] = {{"num_stages", spec.cascade.num_stages},
                  {"filter", filter_to_json(spec.cascade.filter)},
                  {"final_stage_filter", spec.cascade.final_stage_filter}};
  j["constraints"] = constraints_to_json(spec.constraints);
  j["channels"] = json::array();
  for (const ChannelConfig& c : spec.channels)
    j["channels"].push_back({{"offset_hz", c.offset_hz},
                             {"target", modulation_to_json(c.target, c.data_seed_explicit)}});
  j["optimizer"] = optimizer_to_json(spec.optimizer);
  if (spec.evaluation) {
    json e = json::object();
    if (spec.evaluation->impairments)
      e["impairments"] = impairments_to_json(*spec.evaluation->impairments);
    if (spec.evaluation->noise_seed) e["noise_seed"] = *spec.evaluation->noise_seed;
    e["dsp"] = {{"enable", spec.evaluation->dsp.enable},
                {"block_len", spec.evaluation->dsp.block_len}};
    j["evaluation"] = e;
  }
  j["master_seed"] = spec.master_seed;
  j["output_dir"] = spec.output_dir;
  return j;
}

JobSpec job_from_json(const json& j) {
  JobSpec spec;
  if (j.value("schema", std::string(kSchemaVersion)) != kSchemaVersion)
    throw ValidationError("job: unsupported schema version");
  spec.name = j.value("name", std::string("job"));
  spec.grid = grid_from_json(j.at("grid"));
  const json& jc = j.at("cascade");
  spec.cascade.num_stages = jc.at("num_stages").get<std::size_t>();
  spec.cascade.filter = filter_from_json(jc.at("filter"));
  spec.cascade.final_stage_filter = jc.value("final_stage_filter", true);
  if (j.contains("constraints")) spec.constraints = constraints_from_json(j.at("constraints"));
  for (const json& ch : j.at("channels")) {
    ChannelConfig c;
    c.offset_hz = ch.at("offset_hz").get<double>();
    c.target = modulation_from_json(ch.at("target"), c.data_seed_explicit);
    spec.channels.push_back(std::move(c));
  }
  if (j.contains("optimizer")) spec.optimizer = optimizer_from_json(j.at("optimizer"));
  if (j.contains("evaluation")) {
    EvaluationConfig e;
    const json& je = j.at("evaluation");
    if (je.contains("impairments")) e.impairments = impairments_from_json(je.at("impairments"));
    if (je.contains("noise_seed")) e.noise_seed = je.at("noise_seed").get<std::uint64_t>();
    if (je.contains("dsp")) {
      e.dsp.enable = je.at("dsp").value("enable", true);
      e.dsp.block_len = je.at("dsp").value("block_len", std::size_t{2000});
    }
    spec.evaluation = std::move(e);
  }
  spec.master_seed = j.value("master_seed", std::uint64_t{1});
  spec.output_dir = j.value("output_dir", std::string());
  return spec;
}

}  // namespace

void JobSpec::validate_and_resolve() {
  if (channels.empty()) throw ValidationError("job: needs at least one channel");
  if (cascade.num_stages == 0) throw ValidationError("job: needs at least one stage");
  optimizer.validate();
  constraints.validate();
  // Derived seeds: keep explicit ones, fill the rest from the master seed.
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (!channels[i].data_seed_explicit) {
      channels[i].target.data_seed = master_seed + i;
      channels[i].data_seed_explicit = true;
    }
    channels[i].target.validate(grid);
    const double half_band =
        (1.0 + channels[i].target.rrc_rolloff) * channels[i].target.baud_rate / 2.0;
    if (std::abs(channels[i].offset_hz) + half_band >= grid.sample_rate_hz / 2.0)
      throw ValidationError("job: channel band extends past Nyquist");
  }
  std::vector<double> offsets;
  for (const ChannelConfig& c : channels) offsets.push_back(c.offset_hz);
  CascadeDesign::uniform(grid, cascade.num_stages, cascade.filter, offsets)
      .validate();  // offsets distinct etc.
  if (evaluation && evaluation->impairments) evaluation->impairments->validate(grid);
  // The job-level constraint set is what the optimizer projects with.
  optimizer.constraints = constraints;
}

std::string job_to_json_string(const JobSpec& spec) { return job_to_json(spec).dump(2) + "\n"; }

JobSpec job_from_json_string(const std::string& text) {
  try {
    return job_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("job: bad JSON: ") + e.what());
  }
}

void save_job(const JobSpec& spec, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_job: cannot open " + path.string());
  out << job_to_json_string(spec);
}

JobSpec load_job(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_job: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return job_from_json_string(ss.str());
}

// --- manifest -----------------------------------------------------------

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("hash_file: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void RunManifest::save(const fs::path& path) const {
  json j;
  j["schema"] = kSchemaVersion;
  j["tool_version"] = tool_version;
  j["spec_hash"] = spec_hash;
  j["converged"] = converged;
  j["degenerate"] = degenerate;
  j["timings_s"] = timings_s;
  j["headline_metrics"] = headline_metrics;
  j["files"] = json::array();
  for (const FileRecord& f : files)
    j["files"].push_back({{"path", f.path}, {"bytes", f.bytes}, {"fnv1a64", f.fnv1a64_hex}});
  std::ofstream out(path);
  if (!out) throw IoError("manifest: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

// --- run pipeline --------------------------------------------------------

namespace {

class Stopwatch {
public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

private:
  std::chrono::steady_clock::time_point start_;
};

// Records every emitted file for the manifest inventory.
class Recorder {
public:
  Recorder(RunManifest& manifest, fs::path root) : manifest_(manifest), root_(std::move(root)) {}

  void add(const fs::path& path) {
    FileRecord rec;
    rec.path = fs::relative(path, root_).generic_string();
    rec.bytes = fs::file_size(path);
    rec.fnv1a64_hex = hash_file(path);
    manifest_.files.push_back(std::move(rec));
  }

  void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string());
    out << j.dump(2) << '\n';
    out.close();
    add(path);
  }

private:
  RunManifest& manifest_;
  fs::path root_;
};

json complex_matrix_to_json(const std::vector<cplx>& m) {
  json rows = json::array();
  for (const cplx& v : m) rows.push_back({v.real(), v.imag()});
  return rows;
}

void write_stage_csvs(const StageTrace& trace, const fs::path& dir, Recorder& rec) {
  for (std::size_t k = 0; k < trace.stages.size(); ++k) {
    const ComplexEnvelope& field = trace.stages[k].after_filter;
    char name[64];
    std::snprintf(name, sizeof name, "stage_%02zu_time.csv", k + 1);
    {
      const fs::path p = dir / name;
      std::ofstream out(p);
      out << "time_s,amplitude,phase_rad\n";
      for (std::size_t i = 0; i < field.size(); ++i) {
        char line[96];
        std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", field.grid.time_at(i),
                      std::abs(field.samples[i]), std::arg(field.samples[i]));
        out << line;
      }
      out.close();
      rec.add(p);
    }
    std::snprintf(name, sizeof name, "stage_%02zu_spectrum.csv", k + 1);
    {
      const fs::path p = dir / name;
      const ComplexEnvelope spec = to_spectrum(field);
      std::ofstream out(p);
      out << "freq_hz,power_db\n";
      // ascending frequency order for plotting
      const long n = static_cast<long>(spec.size());
      for (long i = 0; i < n; ++i) {
        const std::size_t b = static_cast<std::size_t>((i + n / 2) % n);
        const double p_db = 10.0 * std::log10(std::max(std::norm(spec.samples[b]), 1e-300));
        char line[96];
        std::snprintf(line, sizeof line, "%.9g,%.9g\n", spec.grid.frequency_at(b), p_db);
        out << line;
      }
      out.close();
      rec.add(p);
    }
  }
}

void write_constellation_csv(const fs::path& path, const std::vector<cplx>& points,
                             Recorder& rec) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  out << "re,im\n";
  for (const cplx& v : points) {
    char line[80];
    std::snprintf(line, sizeof line, "%.9g,%.9g\n", v.real(), v.imag());
    out << line;
  }
  out.close();
  rec.add(path);
}

double min_channel_spacing(const std::vector<double>& offsets) {
  double spacing = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < offsets.size(); ++i)
    for (std::size_t j = i + 1; j < offsets.size(); ++j)
      spacing = std::min(spacing, std::abs(offsets[i] - offsets[j]));
  return spacing;
}

struct EvalOutcome {
  json metrics;
  std::map<std::string, double> headline;
};

// Clean and (optionally) impaired evaluation of an output field against the
// per-channel targets. Writes constellation CSVs and measured waveforms.
EvalOutcome evaluate_output(const ComplexEnvelope& output_total, const JobSpec& spec,
                            const std::vector<TargetWaveform>& targets,
                            const fs::path& dir, Recorder& rec) {
  const std::size_t n = spec.channels.size();
  const bool multi = n > 1;
  std::vector<double> offsets;
  for (const ChannelConfig& c : spec.channels) offsets.push_back(c.offset_hz);
  const double half_width = multi ? min_channel_spacing(offsets) / 2.0 : 0.0;

  EvalOutcome out;
  out.metrics["schema"] = kSchemaVersion;
  out.metrics["channels"] = json::array();

  // Baseband references: the target itself for single channel (homodyne),
  // otherwise the target resynthesized at zero offset.
  std::vector<ComplexEnvelope> references(n);
  std::vector<ComplexEnvelope> measured(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ChannelConfig& ch = spec.channels[i];
    if (multi) {
      references[i] = synthesize_waveform(targets[i].symbols, ch.target, spec.grid, 0.0);
      measured[i] = extract_channel(output_total, ch.offset_hz, half_width);
    } else {
      references[i] = targets[i].envelope;
      measured[i] = output_total;
    }
  }

  const double dc_db = dc_bin_power_db(output_total);
  out.metrics["dc_bin_power_db"] = dc_db;
  out.headline["dc_bin_power_db"] = dc_db;

  for (std::size_t i = 0; i < n; ++i) {
    const ChannelConfig& ch = spec.channels[i];
    const QualityReport corr = waveform_correlation(measured[i], references[i]);
    const double eval_offset = multi ? 0.0 : ch.offset_hz;
    const SymbolMetrics sym =
        evaluate_symbols(measured[i], ch.target, eval_offset, targets[i].symbols,
                         static_cast<double>(corr.best_lag));
    json jc;
    jc["offset_hz"] = ch.offset_hz;
    jc["correlation"] = corr.correlation;
    jc["best_lag"] = corr.best_lag;
    jc["best_phase"] = corr.best_phase;
    jc["evm_percent"] = sym.evm_percent;
    out.metrics["channels"].push_back(jc);
    out.headline["correlation_ch" + std::to_string(i)] = corr.correlation;
    out.headline["evm_percent_ch" + std::to_string(i)] = sym.evm_percent;

    char name[64];
    std::snprintf(name, sizeof name, "constellation_ch%zu.csv", i);
    write_constellation_csv(dir / name, sym.constellation, rec);
    if (multi) {
      std::snprintf(name, sizeof name, "measured_ch%zu.tlf", i);
      write_envelope(dir / name, measured[i]);
      rec.add(dir / name);
    }
  }

  if (multi) {
    const auto matrix = cross_correlation_matrix(measured);
    out.metrics["cross_correlation"] = matrix;
    double max_offdiag = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) max_offdiag = std::max(max_offdiag, matrix[i][j]);
    out.headline["crosscorr_max_offdiag"] = max_offdiag;
    const fs::path p = dir / "crosscorr.csv";
    std::ofstream outf(p);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        outf << matrix[i][j] << (j + 1 < n ? ',' : '\n');
    }
    outf.close();
    rec.add(p);
  }

  // Impairment + receiver DSP chain.
  if (spec.evaluation && spec.evaluation->impairments) {
    const ImpairmentSpec& imp = *spec.evaluation->impairments;
    const std::uint64_t noise_seed =
        spec.evaluation->noise_seed ? *spec.evaluation->noise_seed : spec.master_seed;
    const ComplexEnvelope impaired = inject_impairments(output_total, imp, noise_seed);
    write_envelope(dir / "impaired.tlf", impaired);
    rec.add(dir / "impaired.tlf");

    json jimp;
    jimp["applied_shift_hz"] = imp.aom_shift_hz();
    jimp["channels"] = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const ChannelConfig& ch = spec.channels[i];
      ComplexEnvelope w =
          multi ? extract_channel(impaired, ch.offset_hz, half_width) : impaired;
      json jc;
      jc["offset_hz"] = ch.offset_hz;
      if (spec.evaluation->dsp.enable) {
        const bool qpsk = ch.target.format == ModulationFormat::qpsk;
        const FrequencyOffsetEstimate est = estimate_frequency_offset(
            w, qpsk ? OffsetEstimatorMode::fourth_power : OffsetEstimatorMode::direct);
        // the estimate includes the channel's own carrier when no
        // extraction happened; compensate only the impairment part
        const double intended = multi ? 0.0 : ch.offset_hz;
        w = frequency_shift(w, -(est.offset_hz - intended));
        w = block_phase_align(w, references[i], spec.evaluation->dsp.block_len);
        if (qpsk)
          w = viterbi_viterbi_cpe(w, spec.evaluation->dsp.block_len, &references[i]).env;
        jc["estimated_offset_hz"] = est.offset_hz;
        jc["offset_confident"] = est.confident;
      }
      const QualityReport corr = waveform_correlation(w, references[i]);
      jc["correlation"] = corr.correlation;
      jimp["channels"].push_back(jc);
      out.headline["impaired_correlation_ch" + std::to_string(i)] = corr.correlation;
      char name[64];
      std::snprintf(name, sizeof name, "compensated_ch%zu.tlf", i);
      write_envelope(dir / name, w);
      rec.add(dir / name);
    }
    out.metrics["impaired"] = jimp;
  }
  return out;
}

}  // namespace

RunManifest run_design(const JobSpec& spec_in, const fs::path& out_dir, int threads) {
  JobSpec spec = spec_in;
  spec.validate_and_resolve();
  fs::create_directories(out_dir);
  fs::create_directories(out_dir / "waveforms");
  fs::create_directories(out_dir / "plots");

  RunManifest manifest;
  Recorder rec(manifest, out_dir);
  Stopwatch watch;

  const std::string canonical = job_to_json_string(spec);
  {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    manifest.spec_hash = buf;
  }
  {
    std::ofstream out(out_dir / "job.json");
    out << canonical;
    out.close();
    rec.add(out_dir / "job.json");
  }

  // Inputs and targets.
  const std::size_t n = spec.channels.size();
  std::vector<double> offsets;
  for (const ChannelConfig& c : spec.channels) offsets.push_back(c.offset_hz);
  // Seed lines: unit-energy tones directly at the channel offsets.
  std::vector<ComplexEnvelope> inputs;
  for (std::size_t i = 0; i < n; ++i) {
    ComplexEnvelope line = cw_input(spec.grid);
    if (offsets[i] != 0.0) {
      const double w = 2.0 * M_PI * offsets[i] / spec.grid.sample_rate_hz;
      for (std::size_t t = 0; t < line.size(); ++t) {
        const double ph = w * static_cast<double>(t);
        line.samples[t] *= cplx(std::cos(ph), std::sin(ph));
      }
    }
    inputs.push_back(std::move(line));
  }
  std::vector<TargetWaveform> targets;
  for (std::size_t i = 0; i < n; ++i)
    targets.push_back(synthesize_target(spec.channels[i].target, spec.grid, offsets[i]));

  for (std::size_t i = 0; i < n; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "input_ch%zu.tlf", i);
    write_envelope(out_dir / "waveforms" / name, inputs[i]);
    rec.add(out_dir / "waveforms" / name);
    std::snprintf(name, sizeof name, "target_ch%zu.tlf", i);
    write_envelope(out_dir / "waveforms" / name, targets[i].envelope);
    rec.add(out_dir / "waveforms" / name);
    std::snprintf(name, sizeof name, "symbols_ch%zu.csv", i);
    write_symbols_csv(out_dir / "waveforms" / name, targets[i].symbols);
    rec.add(out_dir / "waveforms" / name);
  }
  manifest.timings_s["synthesis"] = watch.lap();

  // Optimization.
  CascadeDesign design =
      CascadeDesign::uniform(spec.grid, spec.cascade.num_stages, spec.cascade.filter, offsets);
  design.final_stage_filter = spec.cascade.final_stage_filter;
  OptimizerConfig cfg = spec.optimizer;
  cfg.threads = threads;
  OverlapReport report;
  try {
    if (n == 1) {
      auto [d, r] = optimize_single(inputs[0], targets[0].envelope, std::move(design), cfg);
      design = std::move(d);
      report = std::move(r);
    } else {
      std::vector<ComplexEnvelope> target_envs;
      for (const TargetWaveform& t : targets) target_envs.push_back(t.envelope);
      auto [d, r] = optimize_multi(ChannelPair::make(inputs, target_envs), std::move(design), cfg);
      design = std::move(d);
      report = std::move(r);
    }
  } catch (const DegenerateOverlapError&) {
    manifest.degenerate = true;
    manifest.timings_s["optimization"] = watch.lap();
    manifest.save(out_dir / "manifest.json");
    return manifest;
  }
  manifest.timings_s["optimization"] = watch.lap();
  manifest.converged = report.converged;
  // objective of the returned (best-so-far) design
  manifest.headline_metrics["objective"] =
      report.final_trace_magnitude / static_cast<double>(report.num_channels);
  manifest.headline_metrics["sweeps"] = static_cast<double>(report.sweeps_run);

  // Persist design + report.
  save_design(design, out_dir / "design.json");
  rec.add(out_dir / "design.json");
  for (std::size_t k = 0; k < design.num_stages(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "mask_%02zu.tlf", k);
    rec.add(out_dir / name);
  }
  {
    json jr;
    jr["schema"] = kSchemaVersion;
    jr["converged"] = report.converged;
    jr["sweeps_run"] = report.sweeps_run;
    jr["num_channels"] = report.num_channels;
    jr["final_trace_magnitude"] = report.final_trace_magnitude;
    jr["objective_history"] = report.objective_history;
    jr["stage_overlap_matrices"] = json::array();
    for (const auto& m : report.stage_overlap_matrices)
      jr["stage_overlap_matrices"].push_back(complex_matrix_to_json(m));
    rec.write_json(out_dir / "report.json", jr);
  }

  // Evaluation: propagate the physical (summed) input through the design.
  ComplexEnvelope total_input(spec.grid);
  for (const ComplexEnvelope& in : inputs)
    for (std::size_t t = 0; t < total_input.size(); ++t)
      total_input.samples[t] += in.samples[t];
  const PropagationResult prop = propagate_forward(total_input, design, true);
  write_envelope(out_dir / "waveforms" / "output.tlf", prop.field);
  rec.add(out_dir / "waveforms" / "output.tlf");
  write_envelope_csv(out_dir / "waveforms" / "output.csv", prop.field);
  rec.add(out_dir / "waveforms" / "output.csv");
  write_stage_csvs(*prop.trace, out_dir / "plots", rec);

  // Correlations compare per-channel unit-energy fields; rescale the
  // multi-channel output per channel via extraction, which is scale-free
  // for the correlation metric itself.
  EvalOutcome eval = evaluate_output(prop.field, spec, targets, out_dir / "waveforms", rec);
  for (const auto& [k, v] : eval.headline) manifest.headline_metrics[k] = v;
  rec.write_json(out_dir / "metrics.json", eval.metrics);
  manifest.timings_s["evaluation"] = watch.lap();

  manifest.save(out_dir / "manifest.json");
  return manifest;
}

RunManifest run_eval(const fs::path& design_path, const fs::path& waveform_path,
                     const JobSpec& spec_in, const fs::path& out_dir) {
  JobSpec spec = spec_in;
  spec.validate_and_resolve();
  const CascadeDesign design = load_design(design_path);
  const ComplexEnvelope waveform = read_envelope(waveform_path);
  if (design.grid.num_samples != spec.grid.num_samples ||
      design.grid.sample_rate_hz != spec.grid.sample_rate_hz)
    throw ValidationError("run_eval: design grid differs from job grid");
  if (waveform.grid.num_samples != spec.grid.num_samples ||
      waveform.grid.sample_rate_hz != spec.grid.sample_rate_hz)
    throw ValidationError("run_eval: waveform grid differs from job grid");

  fs::create_directories(out_dir);
  RunManifest manifest;
  Recorder rec(manifest, out_dir);
  Stopwatch watch;
  const std::string canonical = job_to_json_string(spec);
  {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    manifest.spec_hash = buf;
  }

  std::vector<TargetWaveform> targets;
  for (const ChannelConfig& c : spec.channels)
    targets.push_back(synthesize_target(c.target, spec.grid, c.offset_hz));

  ComplexEnvelope field = waveform;
  field.grid = spec.grid;  // adopt center offset bookkeeping
  EvalOutcome eval = evaluate_output(field, spec, targets, out_dir, rec);
  for (const auto& [k, v] : eval.headline) manifest.headline_metrics[k] = v;
  rec.write_json(out_dir / "metrics.json", eval.metrics);
  manifest.converged = true;  // metrics-only run
  manifest.timings_s["evaluation"] = watch.lap();
  manifest.save(out_dir / "manifest.json");
  return manifest;
}

// --- presets --------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"ook20g_3stage", "qpsk15g_8stage", "superchannel_3x15g"};
}

JobSpec make_preset(const std::string& name) {
  JobSpec spec;
  spec.name = name;
  spec.cascade.filter = SpectralFilter::quadratic(-1321.0, 1550.0);
  if (name == "ook20g_3stage") {
    spec.grid = SignalGrid(16384, 160e9);
    spec.cascade.num_stages = 3;
    spec.master_seed = 20;
    ChannelConfig ch;
    ch.offset_hz = 0.0;
    ch.target.format = ModulationFormat::ook;
    ch.target.baud_rate = 20e9;
    ch.target.rrc_rolloff = 0.01;
    ch.target.num_symbols = 512;
    spec.channels = {ch};
  } else if (name == "qpsk15g_8stage") {
    spec.grid = SignalGrid(16384, 160e9);
    spec.cascade.num_stages = 8;
    spec.master_seed = 15;
    ChannelConfig ch;
    ch.offset_hz = 0.0;
    ch.target.format = ModulationFormat::qpsk;
    ch.target.baud_rate = 15e9;
    ch.target.rrc_rolloff = 0.01;
    ch.target.num_symbols = 512;
    spec.channels = {ch};
  } else if (name == "superchannel_3x15g") {
    spec.grid = SignalGrid(32768, 192e9);
    spec.cascade.num_stages = 8;
    spec.master_seed = 33;
    for (int i = -1; i <= 1; ++i) {
      ChannelConfig ch;
      ch.offset_hz = 33e9 * i;
      ch.target.format = ModulationFormat::qpsk;
      ch.target.baud_rate = 15e9;
      ch.target.rrc_rolloff = 0.01;
      ch.target.num_symbols = 512;
      spec.channels.push_back(ch);
    }
  } else {
    throw ValidationError("unknown preset '" + name + "'");
  }
  spec.optimizer.seed = spec.master_seed;
  spec.validate_and_resolve();
  return spec;
}

// --- selftest ---------------------------------------------------------------

namespace {

struct SelfTest {
  int failures = 0;

  void check(const char* name, bool ok, const std::string& detail = "") {
    if (ok) {
      std::printf("ok   %s\n", name);
    } else {
      ++failures;
      std::printf("FAIL %s%s%s\n", name, detail.empty() ? "" : ": ", detail.c_str());
    }
  }
};

ComplexEnvelope random_envelope(const SignalGrid& grid, Philox4x32& rng) {
  ComplexEnvelope env(grid);
  for (cplx& v : env.samples) v = cplx(rng.next_normal(), rng.next_normal());
  return env;
}

}  // namespace

int run_selftest() {
  SelfTest t;
  Philox4x32 rng(2024, "selftest");
  const SignalGrid grid(1024, 40e9);

  {  // Philox known answers (Random123 kat_vectors)
    const auto z = Philox4x32::block({0, 0, 0, 0}, {0, 0});
    const auto f = Philox4x32::block({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                                     {0xffffffff, 0xffffffff});
    const auto pi = Philox4x32::block({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                                      {0xa4093822, 0x299f31d0});
    const bool ok = z == Philox4x32::Counter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8} &&
                    f == Philox4x32::Counter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd} &&
                    pi == Philox4x32::Counter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1};
    t.check("rng philox4x32-10 known answers", ok);
  }
  {  // stream determinism
    Philox4x32 a(7, "stream"), b(7, "stream"), c(7, "other");
    bool same = true, diff = false;
    for (int i = 0; i < 1000; ++i) {
      const std::uint32_t va = a.next_u32();
      if (va != b.next_u32()) same = false;
      if (va != c.next_u32()) diff = true;
    }
    t.check("rng stream determinism", same && diff);
  }
  {  // transform unitarity + round trip
    double worst_e = 0.0, worst_rt = 0.0;
    for (int it = 0; it < 100; ++it) {
      const ComplexEnvelope x = random_envelope(grid, rng);
      const ComplexEnvelope s = to_spectrum(x);
      const ComplexEnvelope back = to_time(s);
      worst_e = std::max(worst_e, std::abs(s.energy() - x.energy()) / x.energy());
      double rt = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i)
        rt += std::norm(back.samples[i] - x.samples[i]);
      worst_rt = std::max(worst_rt, std::sqrt(rt / x.energy()));
    }
    t.check("transform unitarity 1e-12", worst_e < 1e-12);
    t.check("transform round trip 1e-12", worst_rt < 1e-12);
  }
  {  // propagation unitarity + bidirectionality on random cascades
    double worst_energy = 0.0, worst_rt = 0.0;
    for (int it = 0; it < 100; ++it) {
      const std::size_t stages = 1 + (rng.next_u32() % 4);
      CascadeDesign design = CascadeDesign::uniform(
          grid, stages, SpectralFilter::quadratic(-200.0 + 400.0 * rng.next_uniform53()));
      for (StagePlan& s : design.stages)
        for (double& v : s.mask.phase) v = 2.0 * M_PI * (rng.next_uniform53() - 0.5);
      const ComplexEnvelope x = random_envelope(grid, rng);
      const ComplexEnvelope y = propagate_forward(x, design).field;
      worst_energy = std::max(worst_energy, std::abs(y.energy() - x.energy()) / x.energy());
      const ComplexEnvelope back = propagate_backward(y, design).field;
      double rt = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) rt += std::norm(back.samples[i] - x.samples[i]);
      worst_rt = std::max(worst_rt, std::sqrt(rt / x.energy()));
    }
    t.check("cascade unitarity 1e-10", worst_energy < 1e-10);
    t.check("cascade round trip 1e-10", worst_rt < 1e-10);
  }
  {  // dispersion scaling: same arrays, rate*2, D/4 -> identical output
    CascadeDesign design =
        CascadeDesign::uniform(grid, 2, SpectralFilter::quadratic(-1321.0));
    Philox4x32 r2(5, "scaling");
    for (StagePlan& s : design.stages)
      for (double& v : s.mask.phase) v = 2.0 * M_PI * (r2.next_uniform53() - 0.5);
    ComplexEnvelope x(grid);
    for (cplx& v : x.samples) v = cplx(r2.next_normal(), r2.next_normal());
    const ComplexEnvelope y = propagate_forward(x, design).field;

    const SignalGrid fast(grid.num_samples, 2.0 * grid.sample_rate_hz);
    CascadeDesign compressed =
        CascadeDesign::uniform(fast, 2, SpectralFilter::quadratic(-1321.0 / 4.0));
    for (std::size_t k = 0; k < 2; ++k) compressed.stages[k].mask.phase = design.stages[k].mask.phase;
    ComplexEnvelope xc(fast);
    xc.samples = x.samples;
    const ComplexEnvelope yc = propagate_forward(xc, compressed).field;
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err += std::norm(yc.samples[i] - y.samples[i]);
    t.check("dispersion scaling law", std::sqrt(err / y.energy()) < 1e-9);
  }
  {  // correlation invariances
    const ComplexEnvelope x = random_envelope(grid, rng);
    ComplexEnvelope shifted(grid);
    const std::size_t lag = 5;
    for (std::size_t i = 0; i < x.size(); ++i)
      shifted.samples[(i + lag) % x.size()] = x.samples[i] * cplx(0.0, 2.0);  // scale+phase
    const QualityReport q = waveform_correlation(shifted, x);
    t.check("correlation invariances",
            std::abs(q.correlation - 1.0) < 1e-12 && q.best_lag == static_cast<long>(lag));
  }
  {  // constraint idempotence (hardware set)
    ConstraintSet cs;
    cs.drive_bandwidth_hz = 10e9;
    cs.dac_bits = 6;
    cs.max_swing_radians = 0.8 * M_PI;
    PhaseMask mask(grid);
    for (double& v : mask.phase) v = 4.0 * (rng.next_uniform53() - 0.5);
    const PhaseMask once = apply_constraints(mask, cs, grid);
    const PhaseMask twice = apply_constraints(once, cs, grid);
    double err = 0.0;
    for (std::size_t i = 0; i < once.phase.size(); ++i)
      err = std::max(err, std::abs(once.phase[i] - twice.phase[i]));
    t.check("constraint idempotence", err < 1e-12);
  }

  if (t.failures == 0)
    std::printf("selftest: all suites passed\n");
  else
    std::printf("selftest: %d suite(s) FAILED\n", t.failures);
  return t.failures;
}

}  // namespace tlens
