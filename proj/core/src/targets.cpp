#include "tlens/targets.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "tlens/rng.hpp"

namespace tlens {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

// Window must hold an integer number of symbols (circular synthesis).
double exact_window_symbols(const ModulationSpec& spec, const SignalGrid& grid) {
  const double ms = grid.duration_s() * spec.baud_rate;
  const double rounded = std::round(ms);
  if (std::abs(ms - rounded) > 1e-6 || rounded < 1.0)
    throw ValidationError(
        "ModulationSpec: grid window does not hold an integer symbol count "
        "(duration * baud_rate must be an integer)");
  return rounded;
}

long bin_offset_or_throw(double offset_hz, const SignalGrid& grid, const char* where) {
  const double bins = offset_hz / grid.bin_spacing_hz();
  const double rounded = std::round(bins);
  if (std::abs(bins - rounded) > 1e-6)
    throw ValidationError(std::string(where) +
                          ": offset must be bin-aligned (integer multiple of "
                          "sample_rate / num_samples)");
  return static_cast<long>(rounded);
}

double rrc_amplitude(double f, double rolloff, double baud) {
  const double f1 = (1.0 - rolloff) * baud / 2.0;
  const double f2 = (1.0 + rolloff) * baud / 2.0;
  const double af = std::abs(f);
  if (af <= f1) return 1.0;
  if (af >= f2) return 0.0;
  // transition band only exists for rolloff > 0
  const double x = M_PI * (af - f1) / (rolloff * baud);
  return std::sqrt(0.5 * (1.0 + std::cos(x)));
}

}  // namespace

void ModulationSpec::validate(const SignalGrid& grid) const {
  if (!(rrc_rolloff >= 0.0 && rrc_rolloff <= 1.0))
    throw ValidationError("ModulationSpec: rrc_rolloff must be in [0, 1]");
  if (!(baud_rate > 0.0)) throw ValidationError("ModulationSpec: baud_rate must be positive");
  if (num_symbols == 0) throw ValidationError("ModulationSpec: num_symbols must be >= 1");
  if (!(baud_rate * (1.0 + rrc_rolloff) < grid.sample_rate_hz))
    throw ValidationError("ModulationSpec: occupied bandwidth exceeds the grid rate");
  const double ms = exact_window_symbols(*this, grid);
  const double tiles = ms / static_cast<double>(num_symbols);
  if (std::abs(tiles - std::round(tiles)) > 1e-9 || tiles < 1.0)
    throw ValidationError(
        "ModulationSpec: window symbol count must be an integer multiple of "
        "num_symbols");
}

std::size_t ModulationSpec::window_symbols(const SignalGrid& grid) const {
  return static_cast<std::size_t>(exact_window_symbols(*this, grid));
}

std::vector<double> CombSpec::offsets_hz() const {
  std::vector<double> offsets(num_lines);
  for (std::size_t i = 0; i < num_lines; ++i)
    offsets[i] = (static_cast<double>(i) - static_cast<double>(num_lines - 1) / 2.0) *
                 line_spacing_hz;
  return offsets;
}

std::vector<double> rrc_filter_response(double rolloff, double baud,
                                        const SignalGrid& grid) {
  if (!(rolloff >= 0.0 && rolloff <= 1.0))
    throw ValidationError("rrc_filter_response: rolloff must be in [0, 1]");
  if ((1.0 + rolloff) * baud / 2.0 >= grid.sample_rate_hz / 2.0)
    throw ValidationError("rrc_filter_response: bandwidth exceeds Nyquist");
  std::vector<double> h(grid.num_samples);
  for (std::size_t b = 0; b < grid.num_samples; ++b)
    h[b] = rrc_amplitude(grid.frequency_at(b), rolloff, baud);
  return h;
}

std::vector<cplx> draw_symbols(const ModulationSpec& spec) {
  Philox4x32 rng(spec.data_seed, "symbols");
  std::vector<cplx> pattern(spec.num_symbols);
  if (spec.format == ModulationFormat::ook) {
    for (cplx& s : pattern) s = cplx(static_cast<double>(rng.next_u32() & 1u), 0.0);
    if (spec.max_zero_run) {
      const std::size_t limit = *spec.max_zero_run;
      if (limit == 0) throw ValidationError("ModulationSpec: max_zero_run must be >= 1");
      std::size_t run = 0;
      for (cplx& s : pattern) {
        if (s.real() == 0.0 && ++run > limit) {
          s = cplx(1.0, 0.0);
          run = 0;
        } else if (s.real() != 0.0) {
          run = 0;
        }
      }
      // circular wrap: tail zeros continue into head zeros
      std::size_t tail = 0;
      while (tail < pattern.size() && pattern[pattern.size() - 1 - tail].real() == 0.0) ++tail;
      std::size_t head = 0;
      while (head < pattern.size() && pattern[head].real() == 0.0) ++head;
      if (tail + head > limit && tail + head < pattern.size())
        pattern[pattern.size() - 1] = cplx(1.0, 0.0);
    }
  } else {
    // Gray labels on the two low bits: b = 2*b1 + b0.
    static const cplx map[4] = {cplx(kInvSqrt2, kInvSqrt2), cplx(-kInvSqrt2, kInvSqrt2),
                                cplx(kInvSqrt2, -kInvSqrt2), cplx(-kInvSqrt2, -kInvSqrt2)};
    for (cplx& s : pattern) s = map[rng.next_u32() & 3u];
  }
  return pattern;
}

ComplexEnvelope synthesize_waveform(const std::vector<cplx>& pattern,
                                    const ModulationSpec& spec, const SignalGrid& grid,
                                    double offset_hz) {
  spec.validate(grid);
  if (pattern.size() != spec.num_symbols)
    throw ValidationError("synthesize_waveform: pattern length != num_symbols");
  const double half_band = (1.0 + spec.rrc_rolloff) * spec.baud_rate / 2.0;
  if (std::abs(offset_hz) + half_band >= grid.sample_rate_hz / 2.0)
    throw ValidationError("synthesize_waveform: offset pushes band past Nyquist");
  bin_offset_or_throw(offset_hz, grid, "synthesize_waveform");

  const std::size_t window_syms = spec.window_symbols(grid);
  const std::size_t tile = window_syms / spec.num_symbols;

  // DFT of the distinct pattern; the tiled sequence occupies multiples of
  // `tile` with an extra factor `tile` folded into normalization.
  std::vector<cplx> pattern_dft(spec.num_symbols, cplx(0.0, 0.0));
  for (std::size_t q = 0; q < spec.num_symbols; ++q) {
    cplx acc(0.0, 0.0);
    const double w = -2.0 * M_PI * static_cast<double>(q) / static_cast<double>(spec.num_symbols);
    for (std::size_t m = 0; m < spec.num_symbols; ++m)
      acc += pattern[m] * cplx(std::cos(w * static_cast<double>(m)),
                               std::sin(w * static_cast<double>(m)));
    pattern_dft[q] = acc;
  }

  // Fourier coefficient of the periodic waveform at relative line index n
  // (frequency n/duration from the channel center): H(n*df) * S(n mod M),
  // nonzero only when n is a multiple of the tile count.
  ComplexEnvelope spectrum(grid);
  const double df = grid.bin_spacing_hz();
  const long m_window = static_cast<long>(window_syms);
  for (std::size_t b = 0; b < grid.num_samples; ++b) {
    const double f_rel = grid.frequency_at(b) - offset_hz;
    const double amp = rrc_amplitude(f_rel, spec.rrc_rolloff, spec.baud_rate);
    if (amp == 0.0) continue;
    const long n = std::lround(f_rel / df);
    const long q_window = ((n % m_window) + m_window) % m_window;
    if (q_window % static_cast<long>(tile) != 0) continue;
    const long q = q_window / static_cast<long>(tile);
    spectrum.samples[b] = amp * pattern_dft[static_cast<std::size_t>(q)];
  }

  ComplexEnvelope env = to_time(spectrum);
  const double e = env.energy();
  if (!(e > 0.0))
    throw ValidationError("synthesize_waveform: pattern has zero energy");
  if (spec.unit_energy) {
    const double scale = 1.0 / std::sqrt(e);
    for (cplx& v : env.samples) v *= scale;
  }
  return env;
}

TargetWaveform synthesize_target(const ModulationSpec& spec, const SignalGrid& grid,
                                 double offset_hz) {
  TargetWaveform tw;
  tw.symbols = draw_symbols(spec);
  tw.envelope = synthesize_waveform(tw.symbols, spec, grid, offset_hz);
  return tw;
}

std::vector<ComplexEnvelope> synthesize_comb_input(const CombSpec& spec,
                                                   const SignalGrid& grid) {
  if (spec.num_lines == 0) throw ValidationError("CombSpec: needs at least one line");
  if (!spec.weights.empty() && spec.weights.size() != spec.num_lines)
    throw ValidationError("CombSpec: weights length != num_lines");
  const std::vector<double> offsets = spec.offsets_hz();
  const double span = std::abs(offsets.front());
  if (span >= grid.sample_rate_hz / 2.0)
    throw ValidationError("CombSpec: comb span exceeds Nyquist");

  std::vector<ComplexEnvelope> lines;
  lines.reserve(spec.num_lines);
  const double base_amp = 1.0 / std::sqrt(static_cast<double>(grid.num_samples));
  for (std::size_t i = 0; i < spec.num_lines; ++i) {
    bin_offset_or_throw(offsets[i], grid, "synthesize_comb_input");
    const double amp =
        spec.weights.empty() ? base_amp : base_amp * std::sqrt(spec.weights[i]);
    ComplexEnvelope line(grid);
    const double w = 2.0 * M_PI * offsets[i] / grid.sample_rate_hz;
    for (std::size_t t = 0; t < grid.num_samples; ++t) {
      const double ph = w * static_cast<double>(t);
      line.samples[t] = amp * cplx(std::cos(ph), std::sin(ph));
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

ComplexEnvelope cw_input(const SignalGrid& grid) {
  ComplexEnvelope env(grid);
  const double amp = 1.0 / std::sqrt(static_cast<double>(grid.num_samples));
  for (cplx& v : env.samples) v = cplx(amp, 0.0);
  return env;
}

std::vector<cplx> matched_filter_symbols(const ComplexEnvelope& env,
                                         const ModulationSpec& spec, double offset_hz,
                                         double delay_samples) {
  spec.validate(env.grid);
  const SignalGrid& grid = env.grid;
  const ComplexEnvelope spectrum = to_spectrum(env);
  const std::size_t window_syms = spec.window_symbols(grid);

  // Matched-filtered occupied bins, downconverted by the channel offset.
  struct Line {
    double f_rel;
    cplx value;
  };
  std::vector<Line> lines;
  for (std::size_t b = 0; b < grid.num_samples; ++b) {
    const double f_rel = grid.frequency_at(b) - offset_hz;
    const double amp = rrc_amplitude(f_rel, spec.rrc_rolloff, spec.baud_rate);
    if (amp == 0.0) continue;
    lines.push_back({f_rel, amp * spectrum.samples[b]});
  }

  const double t_step = 1.0 / spec.baud_rate;
  const double t0 = delay_samples / grid.sample_rate_hz;
  std::vector<cplx> symbols(window_syms);
  for (std::size_t m = 0; m < window_syms; ++m) {
    const double t = t0 + static_cast<double>(m) * t_step;
    cplx acc(0.0, 0.0);
    for (const Line& ln : lines) {
      const double ph = 2.0 * M_PI * ln.f_rel * t;
      acc += ln.value * cplx(std::cos(ph), std::sin(ph));
    }
    symbols[m] = acc;
  }
  return symbols;
}

void write_symbols_csv(const std::filesystem::path& path, const std::vector<cplx>& symbols) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(
      std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("write_symbols_csv: cannot open " + path.string());
  std::fprintf(f.get(), "index,re,im\n");
  for (std::size_t i = 0; i < symbols.size(); ++i)
    std::fprintf(f.get(), "%zu,%.17g,%.17g\n", i, symbols[i].real(), symbols[i].imag());
}

}  // namespace tlens
