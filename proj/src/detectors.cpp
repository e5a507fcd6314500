#include "otdr/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <string>

#include <boost/math/special_functions/erf.hpp>

#include "otdr/binary_io.hpp"
#include "otdr/error.hpp"

namespace otdr::det {
namespace {

constexpr int kWindow = 35;

double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }

// Q^-1(p) = sqrt(2) erfcinv(2p)
double q_inverse(double p) { return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }
double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

}  // namespace

BoundPoint optimum_bound_pd(double snr_db, double p_fa) {
  require(std::isfinite(snr_db), ErrorKind::Domain, "snr_db must be finite");
  require(p_fa > 0.0 && p_fa <= 0.5, ErrorKind::Domain,
          "p_fa must lie in (0, 0.5] for the optimum bound");
  const double snr = db_to_lin(snr_db);
  BoundPoint b;
  b.snr_db = snr_db;
  b.p_fa = p_fa;
  b.delta = boost::math::erfc_inv(2.0 * p_fa) / std::sqrt(2.0 * snr);
  b.p_d = 0.5 * std::erfc(2.0 * (b.delta - 1.0) * std::sqrt(0.5 * snr));
  return b;
}

double matched_filter_pd_closed_form(const sim::PulseTemplate& tmpl, double snr_db,
                                     double p_fa) {
  require(p_fa > 0.0 && p_fa < 1.0, ErrorKind::Domain, "p_fa must lie in (0, 1)");
  const double d = std::sqrt(tmpl.extent_samples * db_to_lin(snr_db));
  return q_function(q_inverse(p_fa) - d);
}

MonteCarloPoint matched_filter_pd(const sim::SimConfig& cfg, double snr_db,
                                  double p_fa, std::size_t trials,
                                  std::uint64_t seed) {
  return matched_filter_pd(cfg, snr_db, snr_db, p_fa, trials, seed);
}

MonteCarloPoint matched_filter_pd(const sim::SimConfig& cfg, double snr_lo_db,
                                  double snr_hi_db, double p_fa,
                                  std::size_t trials, std::uint64_t seed) {
  require(snr_lo_db <= snr_hi_db, ErrorKind::Domain, "empty SNR range");
  require(p_fa > 0.0 && p_fa < 1.0, ErrorKind::Domain, "p_fa must lie in (0, 1)");
  require(trials >= 1, ErrorKind::Config, "need at least one Monte Carlo trial");

  const auto tmpl = sim::build_pulse_template(cfg);
  // Only the event neighbourhood matters; a short trace keeps this cheap.
  sim::SimConfig local = cfg;
  local.trace_len_samples = static_cast<int>(tmpl.samples.size()) + kWindow + 2;
  const auto range = sim::valid_position_range(tmpl, local.trace_len_samples);

  MonteCarloPoint mc;
  mc.snr_db = 0.5 * (snr_lo_db + snr_hi_db);
  mc.p_fa = p_fa;
  mc.threshold = q_inverse(p_fa);
  mc.trials = trials;

  std::size_t hits = 0, false_alarms = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng(derive_seed(seed, i, stream::kMonteCarlo));
    std::uniform_real_distribution<double> upos(range[0], range[1]);
    std::uniform_real_distribution<double> urefl(cfg.reflectance_db_range[0],
                                                 cfg.reflectance_db_range[1]);
    const double pos_m = upos(rng) * cfg.sample_spacing_m;
    const double refl = urefl(rng);
    const double snr_db = snr_lo_db == snr_hi_db
                              ? snr_lo_db
                              : std::uniform_real_distribution<double>(snr_lo_db, snr_hi_db)(rng);
    const auto tr = sim::simulate_trace(local, tmpl, snr_db, refl, pos_m, rng());
    const auto shape =
        sim::render_event(tmpl, tr.event_position_idx, local.trace_len_samples);

    double sx = 0.0, ss = 0.0, sn = 0.0;
    std::normal_distribution<double> gauss(0.0, tr.noise_sigma);
    for (std::size_t n = 0; n < shape.size(); ++n) {
      const double s = tr.amplitude * shape[n];
      sx += s * tr.samples[n];
      ss += s * s;
      sn += s * gauss(rng);  // same filter on a noise-only trace
    }
    const double scale = tr.noise_sigma * std::sqrt(ss);
    if (sx / scale >= mc.threshold) ++hits;
    if (sn / scale >= mc.threshold) ++false_alarms;
  }
  mc.p_d = double(hits) / double(trials);
  mc.p_fa_empirical = double(false_alarms) / double(trials);
  return mc;
}

GlrtResult glrt_detect(std::span<const double> window, const sim::PulseTemplate& tmpl,
                       double tau) {
  const int n = static_cast<int>(window.size());
  const int m = static_cast<int>(tmpl.samples.size());
  require(m > 0 && m <= kWindow, ErrorKind::Shape,
          "template extent must lie in [1, 35] samples");
  require(std::any_of(tmpl.samples.begin(), tmpl.samples.end(),
                      [](double v) { return v != 0.0; }),
          ErrorKind::Domain, "degenerate (all-zero) template");
  require(n > 0, ErrorKind::Shape, "empty window");

  double xx = 0.0;
  for (double v : window) xx += v * v;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> stat(n, 0.0), amp(n, 0.0);
  for (int p = 0; p < n; ++p) {
    double sx = 0.0, ss = 0.0;
    for (int j = 0; j < m; ++j) {
      const int k = p - tmpl.peak_offset + j;
      if (k < 0 || k >= n) continue;
      sx += tmpl.samples[j] * window[k];
      ss += tmpl.samples[j] * tmpl.samples[j];
    }
    if (ss <= 0.0) continue;
    amp[p] = sx / ss;
    const double explained = sx * sx / ss;
    const double residual = std::max(xx - explained, 0.0) / n;
    if (explained <= 0.0) {
      stat[p] = 0.0;
    } else if (residual <= 1e-14 * xx / n) {
      stat[p] = kInf;
    } else {
      stat[p] = explained / residual;
    }
  }

  const int best = static_cast<int>(std::max_element(stat.begin(), stat.end()) - stat.begin());
  GlrtResult r;
  r.statistic = stat[best];
  r.amplitude_hat = amp[best];
  r.position_idx_hat = best;
  if (best > 0 && best < n - 1 && std::isfinite(stat[best - 1]) &&
      std::isfinite(stat[best]) && std::isfinite(stat[best + 1])) {
    const double l = stat[best - 1], c = stat[best], h = stat[best + 1];
    const double denom = l - 2.0 * c + h;
    if (denom < 0.0) {
      r.position_idx_hat += std::clamp(0.5 * (l - h) / denom, -0.5, 0.5);
    }
  }
  r.detected = r.statistic >= tau;
  return r;
}

double empirical_quantile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::Data, "quantile of an empty sample");
  require(q > 0.0 && q <= 1.0, ErrorKind::Domain, "quantile level must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  auto k = static_cast<std::size_t>(std::ceil(q * double(values.size()) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, values.size());
  return values[k - 1];
}

double calibrate_glrt_threshold(double p_fa, const sim::PulseTemplate& tmpl,
                                std::size_t n_monte_carlo, std::uint64_t seed) {
  require(n_monte_carlo >= 1000, ErrorKind::Config,
          "GLRT calibration needs at least 1000 Monte Carlo windows");
  require(p_fa > 0.0 && p_fa < 1.0, ErrorKind::Domain, "p_fa must lie in (0, 1)");
  std::vector<double> stats(n_monte_carlo);
  std::vector<double> w(kWindow);
  for (std::size_t i = 0; i < n_monte_carlo; ++i) {
    Rng rng(derive_seed(seed, i, stream::kMonteCarlo));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : w) v = gauss(rng);
    stats[i] = glrt_detect(w, tmpl, std::numeric_limits<double>::infinity()).statistic;
  }
  return empirical_quantile(std::move(stats), 1.0 - p_fa);
}

std::vector<BoundCurveRow> bound_curve(const sim::SimConfig& cfg, double p_fa,
                                       std::span<const double> snr_db,
                                       std::size_t trials, std::uint64_t seed) {
  const auto tmpl = sim::build_pulse_template(cfg);
  std::vector<BoundCurveRow> rows;
  rows.reserve(snr_db.size());
  for (std::size_t i = 0; i < snr_db.size(); ++i) {
    BoundCurveRow row;
    row.analytic = optimum_bound_pd(snr_db[i], p_fa);
    row.monte_carlo = matched_filter_pd(cfg, snr_db[i], p_fa, trials,
                                        derive_seed(seed, i, stream::kMonteCarlo));
    row.closed_form = matched_filter_pd_closed_form(tmpl, snr_db[i], p_fa);
    rows.push_back(row);
  }
  return rows;
}

void write_bound_csv(const std::filesystem::path& path,
                     std::span<const BoundCurveRow> rows) {
  std::string out =
      "snr_db,p_fa,delta,p_d,p_d_matched_filter_mc,p_fa_matched_filter_mc,"
      "p_d_matched_filter_closed_form,mc_trials,p_d_gap\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.4f,%.6g,%.10g,%.10g,%.6f,%.6f,%.10g,%zu,%.6f\n",
                  r.analytic.snr_db, r.analytic.p_fa, r.analytic.delta,
                  r.analytic.p_d, r.monte_carlo.p_d, r.monte_carlo.p_fa_empirical,
                  r.closed_form, r.monte_carlo.trials,
                  r.monte_carlo.p_d - r.analytic.p_d);
    out += buf;
  }
  io::write_text(path, out);
}

}  // namespace otdr::det
