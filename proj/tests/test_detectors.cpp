#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "otdr/detectors.hpp"
#include "otdr/error.hpp"
#include "support.hpp"

using namespace otdr;
using namespace otdr::det;

namespace {

using Big = boost::multiprecision::cpp_bin_float_50;

double q_inv(double p) { return std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }
double q(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

sim::PulseTemplate triangle() {
  sim::PulseTemplate t;
  t.samples = {0.5, 1.0, 0.5};
  t.peak_offset = 1;
  t.extent_samples = 1;
  return t;
}

// Exhaustive GLRT on a short window, written from the definition.
double brute_glrt(const std::vector<double>& x, const sim::PulseTemplate& t, int* arg) {
  const int n = int(x.size());
  double best = -1.0;
  for (int p = 0; p < n; ++p) {
    std::vector<double> s(n, 0.0);
    for (int j = 0; j < int(t.samples.size()); ++j) {
      const int k = p - t.peak_offset + j;
      if (k >= 0 && k < n) s[k] = t.samples[j];
    }
    double sx = 0.0, ss = 0.0;
    for (int k = 0; k < n; ++k) {
      sx += s[k] * x[k];
      ss += s[k] * s[k];
    }
    // residual of the least-squares fit x ~ a s
    const double a = sx / ss;
    double res = 0.0;
    for (int k = 0; k < n; ++k) res += (x[k] - a * s[k]) * (x[k] - a * s[k]);
    const double stat = (sx * sx / ss) / (res / n);
    if (stat > best) {
      best = stat;
      *arg = p;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("optimum bound: false-alarm identity and the delta = 1 midpoint") {
  for (double p : {0.01, 0.05, 0.1, 0.3, 0.5}) {
    for (double snr_db : {-5.0, 0.0, 7.0, 15.0, 30.0}) {
      const auto b = optimum_bound_pd(snr_db, p);
      const double snr = std::pow(10.0, snr_db / 10.0);
      CHECK(0.5 * std::erfc(b.delta * std::sqrt(2.0 * snr)) == doctest::Approx(p).epsilon(1e-10));
    }
    // the SNR at which delta == 1
    const double e = boost::math::erfc_inv(2.0 * p);
    const double snr_db = 10.0 * std::log10(e * e / 2.0);
    if (p < 0.5) {
      const auto mid = optimum_bound_pd(snr_db, p);
      CHECK(mid.delta == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(mid.p_d == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
}

TEST_CASE("optimum bound: monotone in SNR and agrees with high-precision evaluation") {
  double prev = 0.0;
  for (double snr_db = -10.0; snr_db <= 40.0; snr_db += 0.25) {
    const auto b = optimum_bound_pd(snr_db, 0.1);
    CHECK(b.p_d >= prev);
    CHECK(b.p_d >= 0.1 - 1e-12);
    prev = b.p_d;

    const Big snr = boost::multiprecision::pow(Big(10), Big(snr_db) / 10);
    const Big d = boost::math::erfc_inv(Big(2) * Big("0.1")) / boost::multiprecision::sqrt(2 * snr);
    const Big pd = boost::math::erfc(2 * (d - 1) * boost::multiprecision::sqrt(snr / 2)) / 2;
    CHECK(b.p_d == doctest::Approx(pd.convert_to<double>()).epsilon(1e-12));
    CHECK(b.delta == doctest::Approx(d.convert_to<double>()).epsilon(1e-12));
  }
}

TEST_CASE("optimum bound: probability outside (0, 0.5] is a domain error") {
  for (double p : {0.0, -0.1, 0.7, 1.0}) {
    try {
      optimum_bound_pd(10.0, p);
      FAIL("accepted p_fa " << p);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Domain);
    }
  }
}

TEST_CASE("matched filter: Monte Carlo agrees with the closed form") {
  sim::SimConfig cfg;
  const auto tmpl = sim::build_pulse_template(cfg);
  const std::size_t n = 20000;
  for (double snr_db : {-10.0, -5.0, 0.0, 5.0}) {
    const auto mc = matched_filter_pd(cfg, snr_db, 0.1, n, 77 + std::uint64_t(snr_db + 20));
    const double cf = matched_filter_pd_closed_form(tmpl, snr_db, 0.1);
    const double k = tmpl.extent_samples;
    CHECK(cf == doctest::Approx(q(q_inv(0.1) - std::sqrt(k * std::pow(10.0, snr_db / 10.0)))));
    const double se = std::sqrt(std::max(cf * (1 - cf), 1e-4) / n);
    CHECK(std::abs(mc.p_d - cf) < 4.0 * se);
    CHECK(std::abs(mc.p_fa_empirical - 0.1) < 4.0 * std::sqrt(0.09 / n));
    CHECK(mc.threshold == doctest::Approx(q_inv(0.1)));
    CHECK(mc.trials == n);
  }
  const auto a = matched_filter_pd(cfg, 0.0, 0.1, 500, 9);
  const auto b = matched_filter_pd(cfg, 0.0, 0.1, 500, 9);
  CHECK(a.p_d == b.p_d);
}

TEST_CASE("glrt: noise-free event is found exactly") {
  sim::SimConfig cfg;
  const auto tmpl = sim::build_pulse_template(cfg);
  std::vector<double> w(35, 0.0);
  for (std::size_t j = 0; j < tmpl.samples.size(); ++j)
    w[15 - tmpl.peak_offset + j] = 2.5 * tmpl.samples[j];
  const auto r = glrt_detect(w, tmpl, 10.0);
  CHECK(r.detected);
  CHECK(std::isinf(r.statistic));
  CHECK(r.position_idx_hat == 15.0);
  CHECK(r.amplitude_hat == doctest::Approx(2.5));
}

TEST_CASE("glrt: scale invariant and equal to exhaustive search on short windows") {
  const auto t = triangle();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = testing::random_vector(8, rng);
    int arg = -1;
    const double expected = brute_glrt(x, t, &arg);
    const auto r = glrt_detect(x, t, 1.0);
    CHECK(r.statistic == doctest::Approx(expected).epsilon(1e-10));
    CHECK(std::abs(r.position_idx_hat - arg) <= 0.5);

    auto scaled = x;
    for (double& v : scaled) v *= 37.0;
    CHECK(glrt_detect(scaled, t, 1.0).statistic == doctest::Approx(r.statistic).epsilon(1e-10));
  }
}

TEST_CASE("glrt: invalid templates are rejected") {
  std::vector<double> w(35, 1.0);
  sim::PulseTemplate empty;
  CHECK_THROWS_AS(glrt_detect(w, empty, 1.0), Error);
  sim::PulseTemplate zeros;
  zeros.samples.assign(5, 0.0);
  try {
    glrt_detect(w, zeros, 1.0);
    FAIL("all-zero template accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Domain);
  }
  sim::PulseTemplate wide;
  wide.samples.assign(36, 1.0);
  CHECK_THROWS_AS(glrt_detect(w, wide, 1.0), Error);
}

TEST_CASE("empirical quantile") {
  std::vector<double> v{5, 1, 4, 2, 3, 10, 9, 8, 7, 6};
  CHECK(empirical_quantile(v, 0.1) == 1.0);
  CHECK(empirical_quantile(v, 0.5) == 5.0);
  CHECK(empirical_quantile(v, 0.9) == 9.0);
  CHECK(empirical_quantile(v, 1.0) == 10.0);
  CHECK_THROWS_AS(empirical_quantile({}, 0.5), Error);
  CHECK_THROWS_AS(empirical_quantile(v, 0.0), Error);
}

TEST_CASE("glrt calibration: held-out false-alarm rate and shrinking spread") {
  sim::SimConfig cfg;
  const auto tmpl = sim::build_pulse_template(cfg);
  const double tau = calibrate_glrt_threshold(0.1, tmpl, 20000, 1);

  std::mt19937_64 rng(999);
  const int n = 10000;
  int fa = 0;
  for (int i = 0; i < n; ++i) {
    const auto w = testing::random_vector(35, rng, 0.3);
    fa += glrt_detect(w, tmpl, tau).detected;
  }
  CHECK(std::abs(double(fa) / n - 0.1) < 0.02);

  auto spread = [&](std::size_t trials) {
    std::vector<double> taus;
    for (std::uint64_t s = 0; s < 12; ++s)
      taus.push_back(calibrate_glrt_threshold(0.1, tmpl, trials, 100 + s));
    double mean = 0.0, var = 0.0;
    for (double t : taus) mean += t / taus.size();
    for (double t : taus) var += (t - mean) * (t - mean) / (taus.size() - 1);
    return std::sqrt(var);
  };
  // 16x the trials should cut the standard error by about 4x
  const double small = spread(1000), large = spread(16000);
  CHECK(large < small / 2.0);
  CHECK_THROWS_AS(calibrate_glrt_threshold(0.1, tmpl, 999, 1), Error);
}

TEST_CASE("bound curve rows carry all three curves") {
  sim::SimConfig cfg;
  const std::vector<double> snr{0.0, 10.0};
  const auto rows = bound_curve(cfg, 0.1, snr, 2000, 3);
  REQUIRE(rows.size() == 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].analytic.snr_db == snr[i]);
    CHECK(rows[i].monte_carlo.snr_db == snr[i]);
    CHECK(rows[i].closed_form > 0.9);
  }
  const auto path = std::filesystem::temp_directory_path() / "otdr_test_bound.csv";
  write_bound_csv(path, rows);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("snr_db,p_fa,delta,p_d,", 0) == 0);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 2);
  std::filesystem::remove(path);
}
