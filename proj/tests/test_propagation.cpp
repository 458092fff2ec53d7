#include <cmath>
#include <complex>

#include "doctest.h"
#include "tlens/propagation.hpp"
#include "tlens/rng.hpp"

using namespace tlens;

namespace {

ComplexEnvelope random_envelope(const SignalGrid& grid, std::uint64_t seed) {
  Philox4x32 rng(seed, "test-prop");
  ComplexEnvelope env(grid);
  for (cplx& v : env.samples) v = cplx(rng.next_normal(), rng.next_normal());
  return env;
}

double rel_error(const ComplexEnvelope& a, const ComplexEnvelope& b) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err += std::norm(a.samples[i] - b.samples[i]);
    ref += std::norm(b.samples[i]);
  }
  return std::sqrt(err / ref);
}

CascadeDesign random_design(const SignalGrid& grid, std::size_t stages, std::uint64_t seed) {
  CascadeDesign design =
      CascadeDesign::uniform(grid, stages, SpectralFilter::quadratic(-1321.0));
  Philox4x32 rng(seed, "test-prop-design");
  for (StagePlan& s : design.stages)
    for (double& v : s.mask.phase) v = 2.0 * M_PI * (rng.next_uniform53() - 0.5);
  return design;
}

// GDD (second derivative of the spectral phase) realized by a quadratic
// filter: beta = D_si * lambda0^2 / (2*pi*c).
double gdd_of(double dispersion_ps_per_nm, double lambda0_nm = 1550.0) {
  const double d_si = dispersion_ps_per_nm * 1e-3;
  const double l0 = lambda0_nm * 1e-9;
  return d_si * l0 * l0 / (2.0 * M_PI * kSpeedOfLight);
}

// Complex Gaussian parameter chain: u(t) = exp(-a (t-tc)^2 / 2).
// A temporal chirp K maps a -> a - jK; a dispersive filter with GDD beta
// maps 1/a -> 1/a - j*beta. Exact for Gaussians, the oracle for both the
// dispersion and the time-lens tests.
cplx gaussian_after_chirp(cplx a, double chirp) { return a - cplx(0.0, chirp); }
cplx gaussian_after_gdd(cplx a, double beta) {
  return 1.0 / (1.0 / a - cplx(0.0, beta));
}

ComplexEnvelope gaussian_pulse(const SignalGrid& grid, double sigma, double tone_hz = 0.0) {
  ComplexEnvelope env(grid);
  const double tc = grid.duration_s() / 2.0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double dt = grid.time_at(i) - tc;
    const double amp = std::exp(-dt * dt / (2.0 * sigma * sigma));
    const double ph = 2.0 * M_PI * tone_hz * dt;
    env.samples[i] = amp * cplx(std::cos(ph), std::sin(ph));
  }
  return env;
}

// Centroid and variance of |u|^2 around the window center.
std::pair<double, double> intensity_moments(const ComplexEnvelope& env) {
  double w = 0.0, m1 = 0.0;
  const double tc = env.grid.duration_s() / 2.0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double p = std::norm(env.samples[i]);
    w += p;
    m1 += p * (env.grid.time_at(i) - tc);
  }
  m1 /= w;
  double m2 = 0.0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double d = env.grid.time_at(i) - tc - m1;
    m2 += std::norm(env.samples[i]) * d * d;
  }
  return {m1, m2 / w};
}

}  // namespace

TEST_CASE("apply_mask basics") {
  const SignalGrid grid(256, 40e9);
  const ComplexEnvelope x = random_envelope(grid, 1);

  PhaseMask zero(grid);
  const ComplexEnvelope same = apply_mask(x, zero, Direction::forward);
  CHECK(rel_error(same, x) == 0.0);

  PhaseMask mask(grid);
  Philox4x32 rng(2, "mask");
  for (double& v : mask.phase) v = 6.0 * (rng.next_uniform53() - 0.5);
  const ComplexEnvelope fwd = apply_mask(x, mask, Direction::forward);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(std::abs(fwd.samples[i]) - std::abs(x.samples[i])) < 1e-12);
  const ComplexEnvelope back = apply_mask(fwd, mask, Direction::backward);
  CHECK(rel_error(back, x) < 1e-12);

  PhaseMask pi_mask(grid);
  for (double& v : pi_mask.phase) v = M_PI;
  const ComplexEnvelope negated = apply_mask(x, pi_mask, Direction::forward);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(negated.samples[i] + x.samples[i]) < 1e-12);

  PhaseMask bad(grid);
  bad.phase[5] = std::nan("");
  CHECK_THROWS_AS(apply_mask(x, bad, Direction::forward), ValidationError);
  CHECK_THROWS_AS(apply_mask(ComplexEnvelope(SignalGrid(128, 40e9)), zero, Direction::forward),
                  GridMismatchError);
}

TEST_CASE("apply_filter: zero dispersion is the identity") {
  const SignalGrid grid(512, 160e9);
  const ComplexEnvelope x = random_envelope(grid, 3);
  const ComplexEnvelope out = apply_filter(x, SpectralFilter::quadratic(0.0), Direction::forward);
  CHECK(rel_error(out, x) < 1e-13);
}

TEST_CASE("apply_filter: Gaussian width growth matches the closed form") {
  const SignalGrid grid(2048, 160e9);
  const double sigma0 = 3.0 / grid.sample_rate_hz;  // 18.75 ps
  const ComplexEnvelope in = gaussian_pulse(grid, sigma0);
  const double dispersion = -1321.0;
  const ComplexEnvelope out =
      apply_filter(in, SpectralFilter::quadratic(dispersion), Direction::forward);

  CHECK(std::abs(out.energy() - in.energy()) / in.energy() < 1e-12);

  const double beta = gdd_of(dispersion);
  const cplx a_out = gaussian_after_gdd(cplx(1.0 / (sigma0 * sigma0), 0.0), beta);
  const double predicted_var = 1.0 / (2.0 * a_out.real());  // intensity variance
  const auto [centroid, var] = intensity_moments(out);
  CHECK(std::abs(centroid) < 1e-12);
  CHECK(var == doctest::Approx(predicted_var).epsilon(1e-9));
  // classic form: sigma_out^2 = sigma0^2 * (1 + (beta/sigma0^2)^2)
  const double classic = sigma0 * sigma0 * (1.0 + std::pow(beta / (sigma0 * sigma0), 2));
  CHECK(2.0 * var == doctest::Approx(classic).epsilon(1e-9));
}

TEST_CASE("apply_filter: tone group delay pins the dispersion sign") {
  const SignalGrid grid(2048, 160e9);
  const double sigma0 = 8.0 / grid.sample_rate_hz;
  const double detuning = 10e9;
  const ComplexEnvelope in = gaussian_pulse(grid, sigma0, detuning);
  const double dispersion = -1321.0;
  const ComplexEnvelope out =
      apply_filter(in, SpectralFilter::quadratic(dispersion), Direction::forward);

  const double lambda0 = 1550e-9;
  const double expected_delay =
      -(dispersion * 1e-3) * lambda0 * lambda0 / kSpeedOfLight * detuning;  // +105.9 ps
  const auto [centroid, var] = intensity_moments(out);
  (void)var;
  CHECK(centroid == doctest::Approx(expected_delay).epsilon(1e-9));
}

TEST_CASE("apply_filter: tabulated all-pass preserves magnitudes and inverts") {
  const SignalGrid grid(256, 40e9);
  Philox4x32 rng(4, "table");
  std::vector<double> table(grid.num_samples);
  for (double& v : table) v = 2.0 * M_PI * (rng.next_uniform53() - 0.5);
  const SpectralFilter filter = SpectralFilter::tabulated_phase(table);

  const ComplexEnvelope x = random_envelope(grid, 5);
  const ComplexEnvelope y = apply_filter(x, filter, Direction::forward);
  CHECK(std::abs(y.energy() - x.energy()) / x.energy() < 1e-12);
  const ComplexEnvelope spec_x = to_spectrum(x);
  const ComplexEnvelope spec_y = to_spectrum(y);
  for (std::size_t m = 0; m < spec_x.size(); ++m)
    CHECK(std::abs(std::abs(spec_y.samples[m]) - std::abs(spec_x.samples[m])) < 1e-12);
  CHECK(rel_error(apply_filter(y, filter, Direction::backward), x) < 1e-12);

  SpectralFilter bad = SpectralFilter::tabulated_phase(std::vector<double>(128, 0.0));
  CHECK_THROWS_AS(apply_filter(x, bad, Direction::forward), ValidationError);
}

TEST_CASE("zero cascade is the identity") {
  const SignalGrid grid(512, 80e9);
  const CascadeDesign design =
      CascadeDesign::uniform(grid, 4, SpectralFilter::quadratic(0.0));
  const ComplexEnvelope x = random_envelope(grid, 6);
  const PropagationResult fwd = propagate_forward(x, design, true);
  CHECK(rel_error(fwd.field, x) < 1e-12);
  REQUIRE(fwd.trace.has_value());
  CHECK(fwd.trace->stages.size() == 4);
  const PropagationResult bwd = propagate_backward(x, design);
  CHECK(rel_error(bwd.field, x) < 1e-12);
}

TEST_CASE("single-stage time lens refocuses a transform-limited Gaussian") {
  const SignalGrid grid(2048, 160e9);
  // sigma chosen so the compressed pulse stays well resolved on the grid
  const double sigma0 = 8.0 / grid.sample_rate_hz;
  const double a0 = 1.0 / (sigma0 * sigma0);
  const double chirp = 2.0 * a0;  // K*sigma0^2 = 2
  const double beta_focus = chirp / (a0 * a0 + chirp * chirp);
  const double dispersion_ps_per_nm =
      beta_focus * 2.0 * M_PI * kSpeedOfLight / (1550e-9 * 1550e-9) * 1e3;

  CascadeDesign design =
      CascadeDesign::uniform(grid, 1, SpectralFilter::quadratic(dispersion_ps_per_nm));
  const double tc = grid.duration_s() / 2.0;
  for (std::size_t i = 0; i < grid.num_samples; ++i) {
    const double dt = grid.time_at(i) - tc;
    design.stages[0].mask.phase[i] = chirp * dt * dt / 2.0;
  }

  const ComplexEnvelope in = gaussian_pulse(grid, sigma0);
  const ComplexEnvelope out = propagate_forward(in, design).field;
  CHECK(std::abs(out.energy() - in.energy()) / in.energy() < 1e-10);

  // oracle: full complex-parameter chain
  const cplx a_out = gaussian_after_gdd(gaussian_after_chirp(cplx(a0, 0.0), chirp), beta_focus);
  CHECK(std::abs(a_out.imag()) < 1e-6 * a_out.real());  // refocused: chirp-free
  const auto [centroid, var] = intensity_moments(out);
  CHECK(std::abs(centroid) < 1e-13);
  CHECK(var == doctest::Approx(1.0 / (2.0 * a_out.real())).epsilon(1e-9));
  // magnification: width shrinks by sqrt(1 + (K sigma0^2)^2) = sqrt(5)
  const auto [c_in, var_in] = intensity_moments(in);
  (void)c_in;
  CHECK(std::sqrt(var_in / var) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-9));

  // sample-wise magnitude check against the analytic output shape
  double peak = 0.0;
  for (const cplx& v : out.samples) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dt = grid.time_at(i) - tc;
    const double expect = peak * std::exp(-a_out.real() * dt * dt / 2.0);
    CHECK(std::abs(std::abs(out.samples[i]) - expect) < 1e-9 * peak);
  }
}

TEST_CASE("forward-backward round trip on random cascades") {
  const SignalGrid grid(512, 160e9);
  for (int it = 0; it < 10; ++it) {
    const CascadeDesign design = random_design(grid, 1 + it % 4, 100 + it);
    const ComplexEnvelope x = random_envelope(grid, 200 + it);
    const ComplexEnvelope y = propagate_forward(x, design).field;
    CHECK(std::abs(y.energy() - x.energy()) / x.energy() < 1e-10);
    CHECK(rel_error(propagate_backward(y, design).field, x) < 1e-10);
    CHECK(rel_error(propagate_forward(propagate_backward(x, design).field, design).field, x) <
          1e-10);
  }
}

TEST_CASE("backward trace retraces the forward trace of an exact design") {
  const SignalGrid grid(256, 80e9);
  const CascadeDesign design = random_design(grid, 3, 7);
  const ComplexEnvelope x = random_envelope(grid, 8);
  const PropagationResult fwd = propagate_forward(x, design, true);
  const PropagationResult bwd = propagate_backward(fwd.field, design, true);
  REQUIRE(bwd.trace.has_value());
  for (std::size_t k = 0; k < design.num_stages(); ++k) {
    CHECK(rel_error(bwd.trace->stages[k].before_mask, fwd.trace->stages[k].before_mask) < 1e-10);
    CHECK(rel_error(bwd.trace->stages[k].after_mask, fwd.trace->stages[k].after_mask) < 1e-10);
    CHECK(rel_error(bwd.trace->stages[k].after_filter, fwd.trace->stages[k].after_filter) <
          1e-10);
  }
}

TEST_CASE("propagation is linear") {
  const SignalGrid grid(256, 80e9);
  const CascadeDesign design = random_design(grid, 2, 9);
  const ComplexEnvelope x = random_envelope(grid, 10);
  const ComplexEnvelope y = random_envelope(grid, 11);
  const cplx a(0.8, 0.3), b(-0.5, 1.2);
  ComplexEnvelope combo(grid);
  for (std::size_t i = 0; i < combo.size(); ++i)
    combo.samples[i] = a * x.samples[i] + b * y.samples[i];
  const ComplexEnvelope lhs = propagate_forward(combo, design).field;
  const ComplexEnvelope px = propagate_forward(x, design).field;
  const ComplexEnvelope py = propagate_forward(y, design).field;
  ComplexEnvelope rhs(grid);
  for (std::size_t i = 0; i < rhs.size(); ++i)
    rhs.samples[i] = a * px.samples[i] + b * py.samples[i];
  CHECK(rel_error(lhs, rhs) < 1e-10);
}

TEST_CASE("dispersion scaling law: masks(at), D/a^2 reproduce the compressed map") {
  const SignalGrid grid(1024, 80e9);
  const CascadeDesign design = random_design(grid, 3, 12);
  const ComplexEnvelope x = random_envelope(grid, 13);
  const ComplexEnvelope y = propagate_forward(x, design).field;

  for (const int a : {2, 4}) {
    // Same sample arrays on an a-times-faster grid realize x(at) and
    // Phi_k(at); dividing D by a^2 must reproduce y(at) exactly.
    const SignalGrid fast(grid.num_samples, grid.sample_rate_hz * a);
    CascadeDesign compressed = CascadeDesign::uniform(
        fast, design.num_stages(),
        SpectralFilter::quadratic(-1321.0 / static_cast<double>(a * a)));
    for (std::size_t k = 0; k < design.num_stages(); ++k)
      compressed.stages[k].mask.phase = design.stages[k].mask.phase;
    ComplexEnvelope xc(fast);
    xc.samples = x.samples;
    const ComplexEnvelope yc = propagate_forward(xc, compressed).field;
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err += std::norm(yc.samples[i] - y.samples[i]);
    CHECK(std::sqrt(err / y.energy()) < 1e-9);
  }
}

TEST_CASE("final stage filter can be disabled") {
  const SignalGrid grid(256, 80e9);
  CascadeDesign design = random_design(grid, 2, 14);
  design.final_stage_filter = false;
  const ComplexEnvelope x = random_envelope(grid, 15);
  // last stage must act as mask only
  ComplexEnvelope manual = apply_mask(x, design.stages[0].mask, Direction::forward);
  manual = apply_filter(manual, design.stages[0].filter, Direction::forward);
  manual = apply_mask(manual, design.stages[1].mask, Direction::forward);
  CHECK(rel_error(propagate_forward(x, design).field, manual) < 1e-13);
  CHECK(rel_error(propagate_backward(propagate_forward(x, design).field, design).field, x) <
        1e-10);
}

TEST_CASE("design persistence round trip") {
  const SignalGrid grid(128, 40e9);
  CascadeDesign design = random_design(grid, 3, 16);
  design.channel_offsets_hz = {-5e9, 0.0, 5e9};
  const auto dir = std::filesystem::temp_directory_path() / "tlens_test_design";
  std::filesystem::create_directories(dir);
  save_design(design, dir / "design.json");
  const CascadeDesign back = load_design(dir / "design.json");
  REQUIRE(back.num_stages() == design.num_stages());
  CHECK(back.grid == design.grid);
  CHECK(back.channel_offsets_hz == design.channel_offsets_hz);
  for (std::size_t k = 0; k < design.num_stages(); ++k) {
    CHECK(back.stages[k].mask.phase == design.stages[k].mask.phase);
    CHECK(back.stages[k].filter.dispersion_ps_per_nm ==
          design.stages[k].filter.dispersion_ps_per_nm);
  }
}

TEST_CASE("cascade validation") {
  const SignalGrid grid(128, 40e9);
  CascadeDesign design = CascadeDesign::uniform(grid, 2, SpectralFilter::quadratic(0.0));
  design.channel_offsets_hz = {1e9, 1e9};
  CHECK_THROWS_AS(design.validate(), ValidationError);
  design.channel_offsets_hz = {30e9};
  CHECK_THROWS_AS(design.validate(), ValidationError);  // beyond Nyquist
}
