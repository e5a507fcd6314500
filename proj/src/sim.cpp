#include "otdr/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "otdr/config_json.hpp"
#include "otdr/error.hpp"

namespace otdr::sim {

double SimConfig::bandwidth_hz() const {
  return bessel_bandwidth_hz > 0.0 ? bessel_bandwidth_hz : 0.6 / pulse_width_s;
}

double SimConfig::sample_interval_s() const {
  return 2.0 * group_index * sample_spacing_m / kSpeedOfLight;
}

void SimConfig::validate() const {
  require(std::isfinite(pulse_width_s) && pulse_width_s > 0.0, ErrorKind::Config,
          "pulse_width_s must be positive and finite");
  require(!std::isnan(bessel_bandwidth_hz) && bessel_bandwidth_hz >= 0.0,
          ErrorKind::Config, "bessel_bandwidth_hz must be >= 0 (0 = default)");
  require(bessel_order >= 1 && bessel_order <= 10, ErrorKind::Config,
          "bessel_order must be in [1, 10]");
  require(std::isfinite(sample_spacing_m) && sample_spacing_m > 0.0,
          ErrorKind::Config, "sample_spacing_m must be positive");
  require(std::isfinite(group_index) && group_index >= 1.0, ErrorKind::Config,
          "group_index must be >= 1");
  require(trace_len_samples > 0, ErrorKind::Config,
          "trace_len_samples must be positive");
  for (const auto* r : {&snr_db_range, &reflectance_db_range}) {
    require(std::isfinite((*r)[0]) && std::isfinite((*r)[1]) &&
                (*r)[0] <= (*r)[1],
            ErrorKind::Config, "ranges must be finite with low <= high");
  }
}

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Coefficients (ascending powers of s) of the reverse Bessel polynomial.
std::vector<double> reverse_bessel(int n) {
  std::vector<double> a(n + 1);
  for (int k = 0; k <= n; ++k) {
    a[k] = factorial(2 * n - k) /
           (std::ldexp(1.0, n - k) * factorial(k) * factorial(n - k));
  }
  return a;
}

double prototype_gain(const std::vector<double>& a, double w) {
  // |a0 / B(jw)|
  double re = 0.0, im = 0.0;
  double pw = 1.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    switch (k % 4) {
      case 0: re += a[k] * pw; break;
      case 1: im += a[k] * pw; break;
      case 2: re -= a[k] * pw; break;
      case 3: im -= a[k] * pw; break;
    }
    pw *= w;
  }
  return a[0] / std::hypot(re, im);
}

std::vector<double> poly_mul(const std::vector<double>& p,
                             const std::vector<double>& q) {
  std::vector<double> r(p.size() + q.size() - 1, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j) r[i + j] += p[i] * q[j];
  return r;
}

std::vector<double> poly_pow(const std::vector<double>& p, int n) {
  std::vector<double> r{1.0};
  for (int i = 0; i < n; ++i) r = poly_mul(r, p);
  return r;
}

}  // namespace

DigitalFilter design_bessel_lowpass(int order, double cutoff_hz, double fs_hz) {
  require(order >= 1, ErrorKind::Config, "filter order must be >= 1");
  require(cutoff_hz > 0.0 && cutoff_hz < 0.5 * fs_hz, ErrorKind::Config,
          "cutoff must lie in (0, fs/2)");
  const auto proto = reverse_bessel(order);

  // -3 dB frequency of the delay-normalised prototype.
  double lo = 1e-3, hi = 1e3;
  for (int it = 0; it < 200; ++it) {
    const double mid = std::sqrt(lo * hi);
    (prototype_gain(proto, mid) > std::numbers::sqrt2 / 2.0 ? lo : hi) = mid;
  }
  const double w3 = std::sqrt(lo * hi);

  // s -> K (1 - z^-1) / (1 + z^-1), with the cutoff prewarped so that the
  // digital response is -3 dB exactly at cutoff_hz.
  const double warped = std::tan(std::numbers::pi * cutoff_hz / fs_hz);
  const double ratio = w3 / warped;  // (w3 / Omega_c) * K

  const std::vector<double> minus{1.0, -1.0};
  const std::vector<double> plus{1.0, 1.0};
  std::vector<double> den(order + 1, 0.0);
  for (int k = 0; k <= order; ++k) {
    const auto term =
        poly_mul(poly_pow(minus, k), poly_pow(plus, order - k));
    const double c = proto[k] * std::pow(ratio, k);
    for (int i = 0; i <= order; ++i) den[i] += c * term[i];
  }
  auto num = poly_pow(plus, order);
  for (double& v : num) v *= proto[0];

  const double a0 = den[0];
  for (double& v : den) v /= a0;
  for (double& v : num) v /= a0;
  return DigitalFilter{std::move(num), std::move(den)};
}

std::vector<double> DigitalFilter::apply(std::span<const double> x) const {
  // Transposed direct form II.
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> state(n, 0.0);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double out = b[0] * x[i] + state[0];
    for (std::size_t k = 1; k < n; ++k) {
      const double bk = k < b.size() ? b[k] : 0.0;
      const double ak = k < a.size() ? a[k] : 0.0;
      state[k - 1] = bk * x[i] - ak * out + (k < n - 1 ? state[k] : 0.0);
    }
    y[i] = out;
  }
  return y;
}

double DigitalFilter::magnitude(double f_hz, double fs_hz) const {
  const double w = 2.0 * std::numbers::pi * f_hz / fs_hz;
  auto eval = [w](const std::vector<double>& c) {
    double re = 0.0, im = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      re += c[k] * std::cos(w * k);
      im -= c[k] * std::sin(w * k);
    }
    return std::hypot(re, im);
  };
  return eval(b) / eval(a);
}

double PulseTemplate::energy() const {
  double e = 0.0;
  for (double v : samples) e += v * v;
  return e;
}

PulseTemplate build_pulse_template(const SimConfig& cfg) {
  cfg.validate();
  const double dt_fine = cfg.sample_interval_s() / kOversample;
  const double T = cfg.pulse_width_s;
  const double bw = cfg.bandwidth_hz();

  PulseTemplate t;
  if (std::isinf(bw)) {
    const auto n = static_cast<std::size_t>(std::ceil(T / dt_fine - 1e-9));
    t.fine.assign(n, 1.0);
    t.fine_peak = 0;
  } else {
    const double fs = 1.0 / dt_fine;
    const auto filter = design_bessel_lowpass(cfg.bessel_order, bw, fs);
    const auto n = static_cast<std::size_t>(std::ceil((T + 40.0 / bw) / dt_fine));
    std::vector<double> x(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) x[j] = (j * dt_fine < T) ? 1.0 : 0.0;
    const auto drive = filter.apply(x);

    // The modulator imprints the drive on optical power, so the field is its
    // square root; the photodiode squares the field back to power.
    std::vector<double> power(n);
    std::transform(drive.begin(), drive.end(), power.begin(), [](double v) {
      const double field = std::sqrt(std::max(v, 0.0));
      return field * field;
    });
    const auto peak_it = std::max_element(power.begin(), power.end());
    const double peak = *peak_it;
    require(peak > 0.0, ErrorKind::Config, "filtered pulse has no energy");
    for (double& v : power) v /= peak;

    std::size_t first = 0, last = n - 1;
    while (power[first] < kSupportThreshold) ++first;
    while (power[last] < kSupportThreshold) --last;
    t.fine.assign(power.begin() + first, power.begin() + last + 1);
    t.fine_peak = static_cast<int>(peak_it - power.begin()) - static_cast<int>(first);
  }

  const int L = static_cast<int>(t.fine.size());
  const int before = t.fine_peak / kOversample;
  const int after = (L - 1 - t.fine_peak) / kOversample;
  t.peak_offset = before;
  for (int k = -before; k <= after; ++k) {
    t.samples.push_back(t.fine[t.fine_peak + k * kOversample]);
  }
  t.extent_samples = static_cast<int>(std::count_if(
      t.samples.begin(), t.samples.end(),
      [](double v) { return v >= kCoreThreshold; }));

  require(static_cast<int>(t.samples.size()) + 35 <= cfg.trace_len_samples,
          ErrorKind::Config,
          "trace_len_samples must hold a 35-sample window plus the pulse extent");
  return t;
}

double reflectance_to_amplitude(double reflectance_db) {
  return std::pow(10.0, (reflectance_db - kReferenceReflectanceDb) / 10.0);
}

std::array<double, 2> valid_position_range(const PulseTemplate& tmpl,
                                           int trace_len) {
  const double L = static_cast<double>(tmpl.fine.size());
  const double lo = static_cast<double>(tmpl.fine_peak) / kOversample;
  const double hi = (trace_len - 1) - (L - 1 - tmpl.fine_peak) / kOversample;
  return {lo, hi};
}

namespace {
double quantize(double idx) {
  return std::round(idx * kOversample) / kOversample;
}
}  // namespace

std::vector<double> render_event(const PulseTemplate& tmpl, double position_idx,
                                 int trace_len) {
  const double idx = quantize(position_idx);
  const long L = static_cast<long>(tmpl.fine.size());
  std::vector<double> out(trace_len, 0.0);
  const long n0 = std::max(0L, static_cast<long>(std::ceil(
                                   idx - double(tmpl.fine_peak) / kOversample)));
  const long n1 = std::min<long>(
      trace_len - 1,
      static_cast<long>(std::floor(idx + double(L - 1 - tmpl.fine_peak) / kOversample)));
  for (long n = n0; n <= n1; ++n) {
    const long j = std::lround((n - idx) * kOversample) + tmpl.fine_peak;
    if (j >= 0 && j < L) out[n] = tmpl.fine[j];
  }
  return out;
}

Trace simulate_trace(const SimConfig& cfg, const PulseTemplate& tmpl,
                     double snr_db, double reflectance_db, double position_m,
                     std::uint64_t seed) {
  require(!std::isnan(snr_db) && snr_db > -kInf, ErrorKind::Config,
          "snr_db must be finite or +inf");
  require(std::isfinite(reflectance_db), ErrorKind::Config,
          "reflectance_db must be finite");
  require(std::isfinite(position_m), ErrorKind::Placement,
          "event position must be finite");

  const double idx = quantize(position_m / cfg.sample_spacing_m);
  const auto [lo, hi] = valid_position_range(tmpl, cfg.trace_len_samples);
  if (idx < lo || idx > hi) {
    fail(ErrorKind::Placement, "event at sample " + std::to_string(idx) +
                                   " does not fit inside the trace");
  }

  Trace tr;
  tr.event_position_idx = idx;
  tr.event_position_m = idx * cfg.sample_spacing_m;
  tr.reflectance_db = reflectance_db;
  tr.snr_db = snr_db;
  tr.seed = seed;
  tr.amplitude = reflectance_to_amplitude(reflectance_db);

  const auto shape = render_event(tmpl, idx, cfg.trace_len_samples);
  tr.samples.resize(shape.size());
  double energy = 0.0, peak = 0.0;
  for (std::size_t n = 0; n < shape.size(); ++n) {
    tr.samples[n] = tr.amplitude * shape[n];
    energy += tr.samples[n] * tr.samples[n];
    peak = std::max(peak, shape[n]);
  }

  tr.support_begin = tr.core_begin = cfg.trace_len_samples;
  for (int n = 0; n < cfg.trace_len_samples; ++n) {
    if (shape[n] > 0.0) {
      tr.support_begin = std::min(tr.support_begin, n);
      tr.support_end = n + 1;
    }
    if (shape[n] >= kCoreThreshold * peak) {
      tr.core_begin = std::min(tr.core_begin, n);
      tr.core_end = n + 1;
    }
  }

  // SNR = event energy / (K * sigma^2), K = event core length.
  if (std::isinf(snr_db)) {
    tr.noise_sigma = 0.0;
  } else {
    const double k = tmpl.extent_samples;
    tr.noise_sigma = std::sqrt(energy / (k * std::pow(10.0, snr_db / 10.0)));
    Rng rng(derive_seed(seed, 0, stream::kTraceNoise));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : tr.samples) v += tr.noise_sigma * gauss(rng);
  }
  return tr;
}

Trace simulate_trace(const SimConfig& cfg, double snr_db, double reflectance_db,
                     double position_m, std::uint64_t seed) {
  return simulate_trace(cfg, build_pulse_template(cfg), snr_db, reflectance_db,
                        position_m, seed);
}

Trace simulate_indexed(const SimConfig& cfg, const PulseTemplate& tmpl,
                       std::uint64_t index) {
  Rng rng(derive_seed(cfg.rng_seed, index, stream::kTraceParams));
  auto uniform = [&rng](double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
  };
  const double snr = uniform(cfg.snr_db_range[0], cfg.snr_db_range[1]);
  const double refl =
      uniform(cfg.reflectance_db_range[0], cfg.reflectance_db_range[1]);
  const auto [lo, hi] = valid_position_range(tmpl, cfg.trace_len_samples);
  // Stay one fine step inside so quantisation cannot leave the valid range.
  const double step = 1.0 / kOversample;
  const double pos_idx = uniform(lo + step, hi - step);
  Trace tr = simulate_trace(cfg, tmpl, snr, refl, pos_idx * cfg.sample_spacing_m,
                            derive_seed(cfg.rng_seed, index, stream::kTraceNoise));
  tr.id = index;
  return tr;
}

std::vector<Trace> simulate_batch(const SimConfig& cfg, int n_traces) {
  require(n_traces >= 1, ErrorKind::Config, "n_traces must be >= 1");
  const auto tmpl = build_pulse_template(cfg);
  std::vector<Trace> out;
  out.reserve(n_traces);
  for (int i = 0; i < n_traces; ++i) out.push_back(simulate_indexed(cfg, tmpl, i));
  return out;
}

SimConfig load_sim_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  require(in.good(), ErrorKind::Format, "cannot open config " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "config " + file.string() + ": " + e.what());
  }
  // Accept either a bare SimConfig object or {"sim": {...}, ...}.
  return sim_config_from_json(j.contains("sim") ? j.at("sim") : j);
}

}  // namespace otdr::sim
