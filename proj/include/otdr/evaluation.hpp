#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otdr/dataset.hpp"
#include "otdr/detectors.hpp"
#include "otdr/model.hpp"

namespace otdr::eval {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  /// TP / (TP + FN); NaN without positives.
  double p_d() const;
  /// FP / (FP + TN); NaN without negatives.
  double p_fa() const;
};

Confusion confusion_counts(std::span<const std::uint8_t> decisions,
                           std::span<const std::uint8_t> labels);

/// Empirical (1 - p_fa) quantile of negative-class scores; a sample is
/// declared positive iff score >= tau.
double calibrate_threshold_for_pfa(std::span<const double> negative_scores,
                                   double p_fa);

inline constexpr const char* kMlName = "ml_cnn";
inline constexpr const char* kGlrtName = "glrt_r1msde_style";
inline constexpr const char* kBoundName = "optimum_bound";
inline constexpr const char* kMatchedFilterName = "matched_filter_mc";

/// One scored test sequence. Estimates are NaN where a detector has none.
struct ScoredItem {
  std::uint8_t cls = 0;
  float snr_db = 0.0f;
  float position_idx = 0.0f;   // truth, NaN for negatives
  float reflectance_db = 0.0f;
  double score = 0.0;
  double position_idx_hat = 0.0;
  double reflectance_db_hat = 0.0;
};

/// Scores of one detector on one dataset variant, with its calibrated
/// thresholds. This is what raw_scores.bin persists.
struct ScoreSet {
  std::string detector;
  std::string variant;
  std::vector<double> p_fa_levels;
  std::vector<double> thresholds;  // parallel to p_fa_levels
  std::vector<ScoredItem> items;
};

struct Binning {
  double lo = 0.0;
  double hi = 30.0;
  double width = 1.0;
  std::size_t count() const;
  /// Bin of an SNR value; the top edge belongs to the last bin.
  std::optional<std::size_t> index(double snr_db) const;
  double lower_edge(std::size_t i) const { return lo + width * double(i); }
};

/// Everything a report is derived from.
struct RawScores {
  std::string kind;  // detect | localize | reflectance | compare | pipeline
  Binning bins;
  double sample_spacing_m = 1.0;
  std::vector<ScoreSet> sets;
};

struct ReportRow {
  std::string detector;
  std::string variant;
  double p_fa_target = 0.0;
  double threshold = 0.0;
  double snr_bin_db = 0.0;  // lower edge of [snr_bin_db, snr_bin_db + width)
  std::size_t n_pos = 0, n_neg = 0;
  Confusion counts;
  double p_d = 0.0;
  double p_fa = 0.0;
  std::optional<double> rmse_position_m;
  std::optional<double> rmse_reflectance_db;
  std::size_t n_position = 0;     // true positives entering the position RMSE
  std::size_t n_reflectance = 0;  // true positives entering the reflectance RMSE
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;  // empty bins and the like
};

/// Rows for every (p_fa level, snr bin) of a score set. Position error is
/// converted to metres with `sample_spacing_m`; RMSE only over true positives.
std::vector<ReportRow> score_rows(const ScoreSet& set, const Binning& bins,
                                  double sample_spacing_m,
                                  std::vector<std::string>* warnings = nullptr);

// --- scoring ---------------------------------------------------------------

/// Network scores (logits) on the test split plus threshold calibration on
/// `calibration` negatives (the validation split of the training build).
ScoreSet score_ml(model::MultiTaskNet& net, const data::Dataset& test,
                  const data::Dataset& calibration,
                  std::span<const double> p_fa_levels);

/// GLRT on the test split; windows are mapped back to linear power first.
/// Thresholds come from the pure-noise Monte Carlo calibration.
ScoreSet score_glrt(const data::Dataset& test, std::span<const double> p_fa_levels,
                    std::size_t n_monte_carlo, std::uint64_t seed);

// --- sweeps ----------------------------------------------------------------

inline constexpr double kDefaultPfaLevels[] = {0.01, 0.05, 0.1};

/// Copy of a score set restricted to one threshold level.
ScoreSet at_level(const ScoreSet& set, double p_fa);

// Each sweep returns the raw scores it reports on; the report itself is
// report_from_scores(raw), so persisting `raw` is enough to regenerate it.
RawScores sweep_detection(const ScoreSet& ml, const Binning& bins,
                          double sample_spacing_m);
RawScores sweep_localization(std::span<const ScoreSet> variants, double p_fa,
                             const Binning& bins, double sample_spacing_m);
RawScores sweep_reflectance(const ScoreSet& ml, double p_fa, const Binning& bins,
                            double sample_spacing_m);

struct BoundRow {
  double snr_bin_db = 0.0;
  det::BoundPoint analytic;     // evaluated at the bin centre
  det::MonteCarloPoint oracle;  // SNR drawn uniformly inside the bin
};

struct Comparison {
  RawScores raw;  // ML and GLRT on the whole-pattern set at one level
  std::vector<BoundRow> bounds;
};

Comparison compare_detectors(const ScoreSet& ml, const ScoreSet& glrt,
                             const sim::SimConfig& cfg, double p_fa,
                             const Binning& bins, std::size_t mc_trials,
                             std::uint64_t seed);

// --- persistence and plots ---------------------------------------------------

/// Fixed-format CSV; identical inputs give identical bytes.
std::string report_csv(const EvalReport& report);
std::string bound_rows_csv(std::span<const BoundRow> rows);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Rows for every set and every threshold level, in order.
EvalReport report_from_scores(const RawScores& raw);

inline constexpr std::uint32_t kRawScoresVersion = 1;
void save_raw_scores(const std::filesystem::path& path, const RawScores& raw);
RawScores load_raw_scores(const std::filesystem::path& path);

struct Series {
  std::string label;
  std::vector<double> x, y;  // NaN y values break the line
};

/// Self-contained SVG line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, std::span<const Series> series,
                           std::optional<std::pair<double, double>> y_range = {});

/// Series helpers over report rows of one detector/variant/p_fa.
Series series_pd(const EvalReport& r, const std::string& detector,
                 const std::string& variant, double p_fa, const std::string& label,
                 double bin_width);
Series series_rmse(const EvalReport& r, const std::string& detector,
                   const std::string& variant, double p_fa, bool position,
                   const std::string& label, double bin_width);

/// Writes report.csv, raw_scores.bin and the figures that match raw.kind
/// (plus bounds.csv when bounds are given) into `dir`. Returns the report.
EvalReport write_outputs(const std::filesystem::path& dir, const RawScores& raw,
                         std::span<const BoundRow> bounds = {});

}  // namespace otdr::eval
