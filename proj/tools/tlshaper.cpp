// tlshaper: designs and evaluates cascaded time-lens waveform shapers.
//
// Subcommands:
//   design <spec.json>             full design + evaluation run
//   eval <design.json> <wave.tlf> <spec.json>   metrics-only re-evaluation
//   presets list | run <name>      bundled experiment configurations
//   selftest                       fast invariant suites
//
// Output directory precedence: --out, then $TLF_OUT, then the spec's
// output_dir, then ./tlshaper_out/<name>.
//
// Exit codes: 0 success, 2 validation error, 3 non-converged or
// degenerate optimization, 4 I/O error.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "tlens/job.hpp"

namespace {

std::filesystem::path resolve_out_dir(const std::string& cli_out, const tlens::JobSpec& spec) {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("TLF_OUT"); env && *env) return env;
  if (!spec.output_dir.empty()) return spec.output_dir;
  return std::filesystem::path("tlshaper_out") / spec.name;
}

int finish(const tlens::RunManifest& manifest) {
  for (const auto& [key, value] : manifest.headline_metrics)
    std::printf("%-28s %.6g\n", key.c_str(), value);
  if (manifest.degenerate) {
    std::fprintf(stderr, "optimization degenerated; see manifest\n");
    return 3;
  }
  if (!manifest.converged) {
    std::fprintf(stderr, "optimization did not converge within max_iterations\n");
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascaded time-lens waveform shaper"};
  app.require_subcommand(1);

  std::string spec_path, design_path, waveform_path, out_dir, preset_name;
  int threads = 1;

  CLI::App* design = app.add_subcommand("design", "design masks for a job spec");
  design->add_option("spec", spec_path, "job spec JSON")->required();
  design->add_option("--out", out_dir, "output directory");
  design->add_option("--threads", threads, "per-channel propagation threads");

  CLI::App* eval = app.add_subcommand("eval", "re-evaluate a stored design/waveform");
  eval->add_option("design", design_path, "design JSON")->required();
  eval->add_option("waveform", waveform_path, "waveform .tlf")->required();
  eval->add_option("spec", spec_path, "job spec JSON")->required();
  eval->add_option("--out", out_dir, "output directory");

  CLI::App* presets = app.add_subcommand("presets", "bundled experiment presets");
  presets->require_subcommand(1);
  presets->add_subcommand("list", "list preset names");
  CLI::App* preset_run = presets->add_subcommand("run", "run a preset");
  preset_run->add_option("name", preset_name, "preset name")->required();
  preset_run->add_option("--out", out_dir, "output directory");
  preset_run->add_option("--threads", threads, "per-channel propagation threads");

  CLI::App* selftest = app.add_subcommand("selftest", "run the invariant suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (design->parsed()) {
      const tlens::JobSpec spec = tlens::load_job(spec_path);
      return finish(tlens::run_design(spec, resolve_out_dir(out_dir, spec), threads));
    }
    if (eval->parsed()) {
      const tlens::JobSpec spec = tlens::load_job(spec_path);
      return finish(tlens::run_eval(design_path, waveform_path, spec,
                                    resolve_out_dir(out_dir, spec)));
    }
    if (presets->parsed()) {
      if (presets->get_subcommand("list")->parsed()) {
        for (const std::string& name : tlens::preset_names()) std::printf("%s\n", name.c_str());
        return 0;
      }
      const tlens::JobSpec spec = tlens::make_preset(preset_name);
      return finish(tlens::run_design(spec, resolve_out_dir(out_dir, spec), threads));
    }
    if (selftest->parsed()) return tlens::run_selftest() == 0 ? 0 : 1;
  } catch (const tlens::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 2;
  } catch (const tlens::DegenerateOverlapError& e) {
    std::fprintf(stderr, "optimizer degeneracy: %s\n", e.what());
    return 3;
  } catch (const tlens::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
