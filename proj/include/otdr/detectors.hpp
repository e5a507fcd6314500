#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "otdr/sim.hpp"

namespace otdr::det {

struct BoundPoint {
  double snr_db = 0.0;
  double p_fa = 0.0;
  double delta = 0.0;
  double p_d = 0.0;
};

/// Optimum unipolar detector:
///   delta = erfcinv(2 p_fa) / sqrt(2 snr)
///   p_d   = 1/2 erfc(2 (delta - 1) sqrt(snr / 2))
/// with snr linear. Implemented literally, see matched_filter_pd for the
/// simulated counterpart under the trace SNR convention.
BoundPoint optimum_bound_pd(double snr_db, double p_fa);

/// Closed-form P_d of the known-position, known-shape matched filter on a
/// simulated trace: Q(Q^-1(p_fa) - sqrt(K * snr)).
double matched_filter_pd_closed_form(const sim::PulseTemplate& tmpl,
                                     double snr_db, double p_fa);

struct MonteCarloPoint {
  double snr_db = 0.0;
  double p_fa = 0.0;
  double threshold = 0.0;  // on the unit-variance statistic
  double p_d = 0.0;
  double p_fa_empirical = 0.0;
  std::size_t trials = 0;
};

/// Monte Carlo of the ideal matched filter: simulated traces (random
/// position and reflectance), statistic s'x / (sigma |s|) with the true
/// rendered event s and true sigma, fixed threshold Q^-1(p_fa).
MonteCarloPoint matched_filter_pd(const sim::SimConfig& cfg, double snr_db,
                                  double p_fa, std::size_t trials,
                                  std::uint64_t seed);
/// Same, with the SNR of each trial drawn uniformly from [snr_lo, snr_hi).
MonteCarloPoint matched_filter_pd(const sim::SimConfig& cfg, double snr_lo_db,
                                  double snr_hi_db, double p_fa,
                                  std::size_t trials, std::uint64_t seed);

struct GlrtResult {
  bool detected = false;
  double statistic = 0.0;
  double position_idx_hat = 0.0;
  double amplitude_hat = 0.0;
};

/// Rank-1 matched-subspace GLRT over every placement whose template peak
/// lies inside the window (templates clipped at the edges). The noise
/// variance is the ML residual estimate for each placement.
GlrtResult glrt_detect(std::span<const double> window,
                       const sim::PulseTemplate& tmpl, double tau);

/// Empirical (1 - p_fa) quantile of the GLRT statistic on white Gaussian
/// windows of length 35. The statistic is scale invariant, so sigma = 1.
double calibrate_glrt_threshold(double p_fa, const sim::PulseTemplate& tmpl,
                                std::size_t n_monte_carlo, std::uint64_t seed);

/// Lower empirical quantile: sorted[ceil(q * n) - 1], q in (0, 1].
double empirical_quantile(std::vector<double> values, double q);

struct BoundCurveRow {
  BoundPoint analytic;
  MonteCarloPoint monte_carlo;
  double closed_form = 0.0;
};

std::vector<BoundCurveRow> bound_curve(const sim::SimConfig& cfg, double p_fa,
                                       std::span<const double> snr_db,
                                       std::size_t trials, std::uint64_t seed);

void write_bound_csv(const std::filesystem::path& path,
                     std::span<const BoundCurveRow> rows);

}  // namespace otdr::det
