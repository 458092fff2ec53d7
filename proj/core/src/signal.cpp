#include "tlens/signal.hpp"

#include <fftw3.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>

static_assert(std::endian::native == std::endian::little,
              "envelope serialization assumes a little-endian host");

namespace tlens {

namespace {

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

// Process-wide FFTW plan cache. Plans are created once per size under a
// mutex; fftw_execute_dft on distinct buffers is thread-safe.
class FftPlans {
public:
  static FftPlans& instance() {
    static FftPlans p;
    return p;
  }

  void execute(const cplx* in, cplx* out, std::size_t n, int sign) {
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto key = std::make_pair(n, sign);
      auto it = plans_.find(key);
      if (it == plans_.end()) {
        // Two distinct dummy buffers so the plan is out-of-place;
        // FFTW_ESTIMATE keeps plan selection deterministic.
        std::vector<cplx> a(n), b(n);
        plan = fftw_plan_dft_1d(static_cast<int>(n),
                                reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()), sign,
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, plan);
      } else {
        plan = it->second;
      }
    }
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<cplx*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }

private:
  FftPlans() = default;
  std::mutex mutex_;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans_;
};

}  // namespace

SignalGrid::SignalGrid(std::size_t n, double fs, double center_offset)
    : num_samples(n), sample_rate_hz(fs), center_frequency_offset_hz(center_offset) {
  if (!is_power_of_two(n))
    throw ValidationError("SignalGrid: num_samples must be a power of two >= 2");
  if (!(fs > 0.0) || !std::isfinite(fs))
    throw ValidationError("SignalGrid: sample_rate must be positive and finite");
}

double SignalGrid::frequency_at(std::size_t bin) const {
  const double df = bin_spacing_hz();
  if (bin < num_samples / 2) return static_cast<double>(bin) * df;
  return (static_cast<double>(bin) - static_cast<double>(num_samples)) * df;
}

ComplexEnvelope::ComplexEnvelope(const SignalGrid& g, std::vector<cplx> s)
    : grid(g), samples(std::move(s)) {
  if (samples.size() != grid.num_samples)
    throw ValidationError("ComplexEnvelope: samples.length != grid.num_samples");
}

double ComplexEnvelope::energy() const {
  double e = 0.0;
  for (const cplx& v : samples) e += std::norm(v);
  return e;
}

void require_same_grid(const SignalGrid& a, const SignalGrid& b, const char* where) {
  if (!(a == b)) throw GridMismatchError(std::string(where) + ": grid mismatch");
}

namespace {

ComplexEnvelope transform(const ComplexEnvelope& env, int sign) {
  ComplexEnvelope out(env.grid);
  const std::size_t n = env.size();
  FftPlans::instance().execute(env.samples.data(), out.samples.data(), n, sign);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (cplx& v : out.samples) v *= scale;
  return out;
}

}  // namespace

// With x_i = (1/sqrt(N)) sum_k X_k exp(+j 2 pi i k / N), the forward
// (time -> frequency) direction is FFTW's FFTW_FORWARD (exp(-j...)).
ComplexEnvelope to_spectrum(const ComplexEnvelope& env) {
  return transform(env, FFTW_FORWARD);
}

ComplexEnvelope to_time(const ComplexEnvelope& spec) {
  return transform(spec, FFTW_BACKWARD);
}

cplx inner_product(const ComplexEnvelope& a, const ComplexEnvelope& b) {
  require_same_grid(a.grid, b.grid, "inner_product");
  cplx acc(0.0, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.samples[i] * std::conj(b.samples[i]);
  return acc;
}

ComplexEnvelope frequency_shift(const ComplexEnvelope& env, double shift_hz) {
  if (std::abs(shift_hz) >= env.grid.sample_rate_hz / 2.0)
    throw ValidationError("frequency_shift: |shift| at or beyond Nyquist");
  if (shift_hz == 0.0) return env;
  ComplexEnvelope out(env.grid);
  const double w = 2.0 * M_PI * shift_hz / env.grid.sample_rate_hz;  // rad/sample
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double ph = w * static_cast<double>(i);
    out.samples[i] = env.samples[i] * cplx(std::cos(ph), std::sin(ph));
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_envelope(const std::filesystem::path& path, const ComplexEnvelope& env) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("write_envelope: cannot open " + path.string());
  const char magic[4] = {'T', 'L', 'F', '1'};
  const std::uint32_t n = static_cast<std::uint32_t>(env.size());
  const double fs = env.grid.sample_rate_hz;
  bool ok = std::fwrite(magic, 1, 4, f.get()) == 4 &&
            std::fwrite(&n, sizeof n, 1, f.get()) == 1 &&
            std::fwrite(&fs, sizeof fs, 1, f.get()) == 1;
  if (ok) {
    // std::complex<double> is layout-compatible with double[2] (re, im).
    ok = std::fwrite(env.samples.data(), sizeof(cplx), env.size(), f.get()) == env.size();
  }
  if (!ok) throw IoError("write_envelope: short write to " + path.string());
}

ComplexEnvelope read_envelope(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("read_envelope: cannot open " + path.string());
  char magic[4];
  std::uint32_t n = 0;
  double fs = 0.0;
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "TLF1", 4) != 0)
    throw IoError("read_envelope: bad magic in " + path.string());
  if (std::fread(&n, sizeof n, 1, f.get()) != 1 || std::fread(&fs, sizeof fs, 1, f.get()) != 1)
    throw IoError("read_envelope: truncated header in " + path.string());
  ComplexEnvelope env(SignalGrid(n, fs));
  if (std::fread(env.samples.data(), sizeof(cplx), n, f.get()) != n)
    throw IoError("read_envelope: truncated samples in " + path.string());
  for (const cplx& v : env.samples)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw IoError("read_envelope: non-finite sample in " + path.string());
  return env;
}

void write_envelope_csv(const std::filesystem::path& path, const ComplexEnvelope& env) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw IoError("write_envelope_csv: cannot open " + path.string());
  std::fprintf(f.get(), "time_s,re,im\n");
  for (std::size_t i = 0; i < env.size(); ++i)
    std::fprintf(f.get(), "%.17g,%.17g,%.17g\n", env.grid.time_at(i),
                 env.samples[i].real(), env.samples[i].imag());
}

}  // namespace tlens
