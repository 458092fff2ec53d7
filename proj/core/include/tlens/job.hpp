// End-to-end job orchestration: a validated, JSON-round-trippable job
// specification, deterministic run pipeline (synthesis -> optimization ->
// evaluation -> persistence), bundled experiment presets, and the
// self-test suite.
//
// All schemas are versioned "TLF-schema-1". Seeds derive from the job's
// master seed unless given explicitly: channel i's data seed defaults to
// master_seed + i, the optimizer and noise seeds default to master_seed.

#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>

#include "tlens/metrics.hpp"
#include "tlens/optimizer.hpp"
#include "tlens/propagation.hpp"
#include "tlens/targets.hpp"

namespace tlens {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSchemaVersion = "TLF-schema-1";

struct NonConvergedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CascadeConfig {
  std::size_t num_stages = 1;
  SpectralFilter filter;
  bool final_stage_filter = true;
};

struct ChannelConfig {
  double offset_hz = 0.0;
  ModulationSpec target;
  bool data_seed_explicit = false;  // else derived from master_seed
};

struct DspConfig {
  bool enable = true;
  std::size_t block_len = 2000;
};

struct EvaluationConfig {
  std::optional<ImpairmentSpec> impairments;
  std::optional<std::uint64_t> noise_seed;  // default master_seed
  DspConfig dsp;
};

struct JobSpec {
  std::string name = "job";
  SignalGrid grid{65536, 160e9};  // default grid, overridable
  CascadeConfig cascade;
  ConstraintSet constraints;
  std::vector<ChannelConfig> channels;
  OptimizerConfig optimizer;
  std::optional<EvaluationConfig> evaluation;
  std::uint64_t master_seed = 1;
  std::string output_dir;  // optional; CLI/TLF_OUT take precedence

  // Cross-module validation; resolves derived seeds in place.
  void validate_and_resolve();
};

std::string job_to_json_string(const JobSpec& spec);
JobSpec job_from_json_string(const std::string& text);
void save_job(const JobSpec& spec, const std::filesystem::path& path);
JobSpec load_job(const std::filesystem::path& path);

struct FileRecord {
  std::string path;   // relative to the run directory
  std::uint64_t bytes = 0;
  std::string fnv1a64_hex;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string spec_hash;
  std::map<std::string, double> timings_s;
  std::map<std::string, double> headline_metrics;
  std::vector<FileRecord> files;
  bool converged = false;
  bool degenerate = false;

  void save(const std::filesystem::path& path) const;
};

// Full design run: synthesizes inputs/targets, designs the masks,
// evaluates clean (and, when configured, impaired + DSP-compensated)
// metrics, and writes design/masks/report/metrics/waveforms/plot CSVs
// plus the manifest into out_dir.
RunManifest run_design(const JobSpec& spec, const std::filesystem::path& out_dir,
                       int threads = 1);

// Metrics-only run of a stored design against a stored waveform.
RunManifest run_eval(const std::filesystem::path& design_path,
                     const std::filesystem::path& waveform_path, const JobSpec& spec,
                     const std::filesystem::path& out_dir);

std::vector<std::string> preset_names();
JobSpec make_preset(const std::string& name);

// Runs the fast invariant suites; prints one line per suite and returns
// the number of failed suites.
int run_selftest();

// FNV-1a hash of a file's bytes, hex-encoded (manifest integrity).
std::string hash_file(const std::filesystem::path& path);

}  // namespace tlens
