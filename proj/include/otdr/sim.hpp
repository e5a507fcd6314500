#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "otdr/rng.hpp"

namespace otdr::sim {

inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s
inline constexpr double kReferenceReflectanceDb = -0.22;  // ~95% reflector
inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SimConfig {
  double pulse_width_s = 100e-9;
  // 0 means "derive as 0.6 / pulse_width_s"; +inf bypasses the filter.
  double bessel_bandwidth_hz = 0.0;
  int bessel_order = 4;
  double sample_spacing_m = 1.0;
  int trace_len_samples = 1000;
  double group_index = 1.468;
  std::array<double, 2> snr_db_range{0.0, 30.0};
  std::array<double, 2> reflectance_db_range{-45.0, -5.0};
  std::uint64_t rng_seed = 20210404;

  double bandwidth_hz() const;
  /// Two-way sample interval implied by the spatial sampling.
  double sample_interval_s() const;
  void validate() const;
};

SimConfig load_sim_config(const std::filesystem::path& file);

/// Fine-grid oversampling factor used to render sub-sample event positions.
inline constexpr int kOversample = 16;
/// Template support ends where detected power drops below this fraction.
inline constexpr double kSupportThreshold = 1e-2;
/// Event core (the "peak") is the region at or above half maximum.
inline constexpr double kCoreThreshold = 0.5;

/// Noise-free detected pulse shape (after squaring), unit peak.
///
/// `samples` is the shape sampled on the trace grid with the peak on a
/// sample; `fine` holds the same waveform on a grid kOversample times denser
/// and is what gets rendered when an event sits between samples.
struct PulseTemplate {
  std::vector<double> samples;
  int extent_samples = 0;  // core length K used by the SNR definition
  int peak_offset = 0;     // index of the peak in `samples`
  std::vector<double> fine;
  int fine_peak = 0;

  double energy() const;
};

/// Analog-prototype Bessel low-pass realised digitally via a prewarped
/// bilinear transform. Coefficients are in direct form, a[0] == 1.
struct DigitalFilter {
  std::vector<double> b;
  std::vector<double> a;

  std::vector<double> apply(std::span<const double> x) const;
  /// |H(e^{jw})| at frequency f for sample rate fs.
  double magnitude(double f_hz, double fs_hz) const;
};

DigitalFilter design_bessel_lowpass(int order, double cutoff_hz, double fs_hz);

PulseTemplate build_pulse_template(const SimConfig& cfg);

struct Trace {
  std::vector<double> samples;
  double event_position_m = 0.0;
  double event_position_idx = 0.0;
  double reflectance_db = 0.0;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t id = 0;

  double amplitude = 0.0;
  double noise_sigma = 0.0;
  // Half-open sample ranges occupied by the rendered event.
  int support_begin = 0, support_end = 0;
  int core_begin = 0, core_end = 0;
};

/// Peak amplitude for a reflectance, relative to the -0.22 dB reference.
double reflectance_to_amplitude(double reflectance_db);

/// Event rendered at a (fine-grid quantised) fractional index, no noise.
std::vector<double> render_event(const PulseTemplate& tmpl, double position_idx,
                                 int trace_len);

Trace simulate_trace(const SimConfig& cfg, const PulseTemplate& tmpl,
                     double snr_db, double reflectance_db, double position_m,
                     std::uint64_t seed);
Trace simulate_trace(const SimConfig& cfg, double snr_db, double reflectance_db,
                     double position_m, std::uint64_t seed);

/// Trace number `index` of the batch defined by cfg.rng_seed.
Trace simulate_indexed(const SimConfig& cfg, const PulseTemplate& tmpl,
                       std::uint64_t index);

std::vector<Trace> simulate_batch(const SimConfig& cfg, int n_traces);

/// Valid [min, max] event position range (in samples) for the template.
std::array<double, 2> valid_position_range(const PulseTemplate& tmpl,
                                           int trace_len);

}  // namespace otdr::sim
