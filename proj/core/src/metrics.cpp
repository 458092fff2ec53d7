#include "tlens/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tlens/rng.hpp"

namespace tlens {

namespace {

long bin_offset_or_throw(double offset_hz, const SignalGrid& grid, const char* where) {
  const double bins = offset_hz / grid.bin_spacing_hz();
  const double rounded = std::round(bins);
  if (std::abs(bins - rounded) > 1e-6)
    throw ValidationError(std::string(where) + ": offset must be bin-aligned");
  return static_cast<long>(rounded);
}

// h[s] = sum_i m_i * conj(r_{(i-s) mod N}), computed via the correlation
// theorem; h[s] equals the inner product of the measured waveform advanced
// by s with the reference.
std::vector<cplx> circular_cross_correlation(const ComplexEnvelope& m,
                                             const ComplexEnvelope& r) {
  const ComplexEnvelope ms = to_spectrum(m);
  const ComplexEnvelope rs = to_spectrum(r);
  ComplexEnvelope prod(m.grid);
  for (std::size_t k = 0; k < prod.size(); ++k)
    prod.samples[k] = ms.samples[k] * std::conj(rs.samples[k]);
  ComplexEnvelope h = to_time(prod);
  const double scale = std::sqrt(static_cast<double>(m.size()));
  std::vector<cplx> out(h.size());
  for (std::size_t s = 0; s < h.size(); ++s) out[s] = scale * h.samples[s];
  return out;
}

}  // namespace

void ImpairmentSpec::validate(const SignalGrid& grid) const {
  const double nyquist = grid.sample_rate_hz / 2.0;
  const double shift = aom_shift_hz() + (residual_lo_offset_hz ? *residual_lo_offset_hz : 0.0);
  if (std::abs(shift) >= nyquist)
    throw ValidationError("ImpairmentSpec: total frequency shift at or beyond Nyquist");
  if (awgn_snr_db && !std::isfinite(*awgn_snr_db))
    throw ValidationError("ImpairmentSpec: awgn_snr_db must be finite");
}

QualityReport waveform_correlation(const ComplexEnvelope& measured,
                                   const ComplexEnvelope& reference) {
  require_same_grid(measured.grid, reference.grid, "waveform_correlation");
  const double em = measured.energy();
  const double er = reference.energy();
  if (!(em > 0.0) || !(er > 0.0))
    throw ValidationError("waveform_correlation: zero-energy input");

  const std::vector<cplx> h = circular_cross_correlation(measured, reference);
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t s = 0; s < h.size(); ++s) {
    const double mag = std::abs(h[s]);
    if (mag > best_mag) {
      best_mag = mag;
      best = s;
    }
  }

  QualityReport report;
  report.correlation = best_mag / std::sqrt(em * er);
  const long n = static_cast<long>(h.size());
  long lag = static_cast<long>(best);
  if (lag > n / 2) lag -= n;
  report.best_lag = lag;
  report.best_phase = -std::arg(h[best]);
  return report;
}

std::vector<std::vector<double>> cross_correlation_matrix(
    const std::vector<ComplexEnvelope>& channels) {
  if (channels.size() < 2)
    throw ValidationError("cross_correlation_matrix: needs at least two channels");
  const std::size_t n = channels.size();
  std::vector<std::vector<double>> matrix(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      matrix[i][j] = waveform_correlation(channels[i], channels[j]).correlation;
  return matrix;
}

ComplexEnvelope inject_impairments(const ComplexEnvelope& env, const ImpairmentSpec& spec,
                                   std::uint64_t seed) {
  spec.validate(env.grid);
  ComplexEnvelope out = env;

  const double shift =
      spec.aom_shift_hz() + (spec.residual_lo_offset_hz ? *spec.residual_lo_offset_hz : 0.0);
  const double drift =
      spec.slow_phase_drift_rad_per_s ? *spec.slow_phase_drift_rad_per_s : 0.0;
  if (shift != 0.0 || drift != 0.0) {
    const double w = 2.0 * M_PI * shift;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double t = out.grid.time_at(i);
      const double ph = w * t + drift * t;
      out.samples[i] *= cplx(std::cos(ph), std::sin(ph));
    }
  }

  if (spec.awgn_snr_db) {
    const double snr = std::pow(10.0, *spec.awgn_snr_db / 10.0);
    const double noise_energy = env.energy() / snr;
    const double sigma =
        std::sqrt(noise_energy / (2.0 * static_cast<double>(env.size())));
    Philox4x32 rng(seed, "awgn");
    for (cplx& v : out.samples)
      v += cplx(sigma * rng.next_normal(), sigma * rng.next_normal());
  }
  return out;
}

namespace {

// Weighted least-squares slope of the unwrapped phase; returns offset in Hz
// and the weighted RMS fit residual in radians.
std::pair<double, double> linear_phase_fit(const ComplexEnvelope& env) {
  const std::size_t n = env.size();
  double prev_phase = 0.0;
  double unwrapped = 0.0;
  double sw = 0.0, st = 0.0, sp = 0.0, stt = 0.0, stp = 0.0;
  std::vector<double> phases(n), weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = std::norm(env.samples[i]);
    const double raw = std::arg(env.samples[i]);
    if (i == 0) {
      unwrapped = raw;
    } else {
      double d = raw - prev_phase;
      while (d > M_PI) d -= 2.0 * M_PI;
      while (d <= -M_PI) d += 2.0 * M_PI;
      unwrapped += d;
    }
    prev_phase = raw;
    phases[i] = unwrapped;
    weights[i] = w;
    const double t = env.grid.time_at(i);
    sw += w;
    st += w * t;
    sp += w * unwrapped;
    stt += w * t * t;
    stp += w * t * unwrapped;
  }
  if (!(sw > 0.0)) throw ValidationError("estimate_frequency_offset: zero-energy input");
  const double det = sw * stt - st * st;
  if (!(std::abs(det) > 0.0))
    throw ValidationError("estimate_frequency_offset: degenerate time axis");
  const double slope = (sw * stp - st * sp) / det;
  const double intercept = (sp - slope * st) / sw;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = phases[i] - (intercept + slope * env.grid.time_at(i));
    rss += weights[i] * r * r;
  }
  return {slope / (2.0 * M_PI), std::sqrt(rss / sw)};
}

}  // namespace

FrequencyOffsetEstimate estimate_frequency_offset(const ComplexEnvelope& env,
                                                  OffsetEstimatorMode mode) {
  FrequencyOffsetEstimate est;
  if (mode == OffsetEstimatorMode::direct) {
    auto [hz, residual] = linear_phase_fit(env);
    est.offset_hz = hz;
    est.confident = residual < 0.5;
    return est;
  }

  // 4th power strips QPSK modulation, leaving a deterministic spectral
  // line at 4x the offset on top of a data-dependent continuum. Locate the
  // strongest bin, then refine the off-grid line position by maximizing
  // the direct projection |sum_t z_t exp(-j 2 pi f t)| around that bin.
  // Capture range is |offset| < sample_rate / 8 (the line must not alias).
  ComplexEnvelope quartic(env.grid);
  for (std::size_t i = 0; i < env.size(); ++i) {
    const cplx z2 = env.samples[i] * env.samples[i];
    quartic.samples[i] = z2 * z2;
  }
  const ComplexEnvelope spec = to_spectrum(quartic);
  std::size_t peak = 0;
  double peak_mag = -1.0;
  std::vector<double> mags(spec.size());
  for (std::size_t m = 0; m < spec.size(); ++m) {
    mags[m] = std::abs(spec.samples[m]);
    if (mags[m] > peak_mag) {
      peak_mag = mags[m];
      peak = m;
    }
  }
  if (!(peak_mag > 0.0))
    throw ValidationError("estimate_frequency_offset: zero-energy input");

  const auto projection = [&quartic](double f) {
    cplx acc(0.0, 0.0);
    const double w = -2.0 * M_PI * f / quartic.grid.sample_rate_hz;
    for (std::size_t i = 0; i < quartic.size(); ++i) {
      const double ph = w * static_cast<double>(i);
      acc += quartic.samples[i] * cplx(std::cos(ph), std::sin(ph));
    }
    return std::abs(acc);
  };

  // coarse scan across +-1.5 bins, then ternary refinement
  const double df = env.grid.bin_spacing_hz();
  const double center = env.grid.frequency_at(peak);
  double best_f = center;
  double best_mag = -1.0;
  for (int s = -12; s <= 12; ++s) {
    const double f = center + s * df / 8.0;
    const double mag = projection(f);
    if (mag > best_mag) {
      best_mag = mag;
      best_f = f;
    }
  }
  double lo = best_f - df / 8.0, hi = best_f + df / 8.0;
  for (int it = 0; it < 50; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (projection(m1) < projection(m2))
      lo = m1;
    else
      hi = m2;
  }
  const double line_hz = (lo + hi) / 2.0;
  est.offset_hz = line_hz / 4.0;

  // confidence: the line must dominate the typical continuum bin
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  const double median = mags[mags.size() / 2];
  est.confident = median > 0.0 ? peak_mag / median > 8.0 : true;
  return est;
}

ComplexEnvelope block_phase_align(const ComplexEnvelope& env, const ComplexEnvelope& reference,
                                  std::size_t block_len, std::size_t* zero_energy_blocks) {
  require_same_grid(env.grid, reference.grid, "block_phase_align");
  if (block_len == 0) throw ValidationError("block_phase_align: block_len must be >= 1");
  ComplexEnvelope out(env.grid);
  std::size_t zero_blocks = 0;
  for (std::size_t start = 0; start < env.size(); start += block_len) {
    const std::size_t stop = std::min(env.size(), start + block_len);
    cplx acc(0.0, 0.0);
    for (std::size_t i = start; i < stop; ++i)
      acc += reference.samples[i] * std::conj(env.samples[i]);
    cplx rot(1.0, 0.0);
    if (std::abs(acc) > 0.0) {
      const double ph = std::arg(acc);
      rot = cplx(std::cos(ph), std::sin(ph));
    } else {
      ++zero_blocks;
    }
    for (std::size_t i = start; i < stop; ++i) out.samples[i] = env.samples[i] * rot;
  }
  if (zero_energy_blocks) *zero_energy_blocks = zero_blocks;
  return out;
}

CpeResult viterbi_viterbi_cpe(const ComplexEnvelope& env, std::size_t block_len,
                              const ComplexEnvelope* reference) {
  if (block_len == 0) throw ValidationError("viterbi_viterbi_cpe: block_len must be >= 1");
  const std::size_t n = env.size();
  const std::size_t num_blocks = (n + block_len - 1) / block_len;

  // Per-block raw estimates in (-pi/4, pi/4], then unwrap mod pi/2.
  std::vector<double> theta(num_blocks, 0.0);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const std::size_t start = b * block_len;
    const std::size_t stop = std::min(n, start + block_len);
    cplx s4(0.0, 0.0);
    for (std::size_t i = start; i < stop; ++i) {
      const cplx z2 = env.samples[i] * env.samples[i];
      s4 += z2 * z2;
    }
    double raw = (std::abs(s4) > 0.0) ? std::arg(-s4) / 4.0 : (b > 0 ? theta[b - 1] : 0.0);
    if (b > 0) {
      const double quarter = M_PI / 2.0;
      const double k = std::round((theta[b - 1] - raw) / quarter);
      raw += k * quarter;
    }
    theta[b] = raw;
  }

  CpeResult result;
  result.env = ComplexEnvelope(env.grid);
  for (std::size_t i = 0; i < n; ++i) {
    const double th = theta[std::min(i / block_len, num_blocks - 1)];
    result.env.samples[i] = env.samples[i] * cplx(std::cos(-th), std::sin(-th));
  }

  if (reference) {
    require_same_grid(env.grid, reference->grid, "viterbi_viterbi_cpe");
    const cplx c = inner_product(result.env, *reference);
    int best_m = 0;
    double best_re = -1e300;
    for (int m = 0; m < 4; ++m) {
      const double ph = -static_cast<double>(m) * M_PI / 2.0;
      const double re = (c * cplx(std::cos(ph), std::sin(ph))).real();
      if (re > best_re) {
        best_re = re;
        best_m = m;
      }
    }
    if (best_m != 0) {
      const double ph = -static_cast<double>(best_m) * M_PI / 2.0;
      const cplx rot(std::cos(ph), std::sin(ph));
      for (cplx& v : result.env.samples) v *= rot;
    }
    result.quadrant_ambiguous = false;
  } else {
    result.quadrant_ambiguous = true;
  }
  return result;
}

ComplexEnvelope extract_channel(const ComplexEnvelope& env, double offset_hz,
                                double half_bandwidth_hz) {
  const long boff = bin_offset_or_throw(offset_hz, env.grid, "extract_channel");
  const ComplexEnvelope spec = to_spectrum(env);
  ComplexEnvelope shifted(env.grid);
  const long n = static_cast<long>(env.size());
  for (long b = 0; b < n; ++b) {
    if (std::abs(env.grid.frequency_at(static_cast<std::size_t>(b))) > half_bandwidth_hz)
      continue;
    const long src = ((b + boff) % n + n) % n;
    shifted.samples[static_cast<std::size_t>(b)] = spec.samples[static_cast<std::size_t>(src)];
  }
  return to_time(shifted);
}

SymbolMetrics evaluate_symbols(const ComplexEnvelope& env, const ModulationSpec& spec,
                               double offset_hz, const std::vector<cplx>& reference_pattern,
                               double delay_samples) {
  if (reference_pattern.size() != spec.num_symbols)
    throw ValidationError("evaluate_symbols: reference pattern length != num_symbols");
  const std::vector<cplx> samples =
      matched_filter_symbols(env, spec, offset_hz, delay_samples);

  cplx num(0.0, 0.0);
  double den = 0.0;
  for (std::size_t m = 0; m < samples.size(); ++m) {
    const cplx ref = reference_pattern[m % spec.num_symbols];
    num += ref * std::conj(samples[m]);
    den += std::norm(samples[m]);
  }
  if (!(den > 0.0)) throw ValidationError("evaluate_symbols: zero-energy symbol samples");
  const cplx gain = num / den;

  SymbolMetrics metrics;
  metrics.constellation.resize(samples.size());
  double err_sq = 0.0, ref_sq = 0.0;
  for (std::size_t m = 0; m < samples.size(); ++m) {
    const cplx point = gain * samples[m];
    const cplx ref = reference_pattern[m % spec.num_symbols];
    metrics.constellation[m] = point;
    err_sq += std::norm(point - ref);
    ref_sq += std::norm(ref);
  }
  metrics.evm_percent = 100.0 * std::sqrt(err_sq / ref_sq);
  return metrics;
}

double dc_bin_power_db(const ComplexEnvelope& env) {
  const ComplexEnvelope spec = to_spectrum(env);
  double total = 0.0;
  for (const cplx& v : spec.samples) total += std::norm(v);
  if (!(total > 0.0)) throw ValidationError("dc_bin_power_db: zero-energy input");
  const double dc = std::norm(spec.samples[0]);
  return 10.0 * std::log10(std::max(dc, 1e-300) / total);
}

}  // namespace tlens
