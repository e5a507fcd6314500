#include "otdr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "otdr/binary_io.hpp"
#include "otdr/error.hpp"

namespace otdr::eval {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<data::Sequence> test_sequences(const data::Dataset& ds) {
  std::vector<data::Sequence> out;
  for (auto i : ds.indices(data::Split::Test)) out.push_back(ds.sequences[i]);
  require(!out.empty(), ErrorKind::Data, "dataset has an empty test split");
  return out;
}

ScoredItem truth_of(const data::Sequence& s) {
  ScoredItem it;
  it.cls = s.class_id;
  it.snr_db = s.snr_db;
  it.position_idx = s.position_idx.value_or(std::numeric_limits<float>::quiet_NaN());
  it.reflectance_db = s.reflectance_db.value_or(std::numeric_limits<float>::quiet_NaN());
  return it;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Empty for NaN / absent so the CSV stays parseable.
std::string fixed(double v, const char* f = "%.6f") {
  return std::isnan(v) ? std::string() : fmt(f, v);
}
std::string fixed(const std::optional<double>& v, const char* f = "%.6f") {
  return v ? fixed(*v, f) : std::string();
}

}  // namespace

double Confusion::p_d() const {
  return tp + fn == 0 ? kNaN : double(tp) / double(tp + fn);
}

double Confusion::p_fa() const {
  return fp + tn == 0 ? kNaN : double(fp) / double(fp + tn);
}

Confusion confusion_counts(std::span<const std::uint8_t> decisions,
                           std::span<const std::uint8_t> labels) {
  require(decisions.size() == labels.size(), ErrorKind::Shape,
          "decisions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool d = decisions[i] != 0, y = labels[i] != 0;
    if (d && y) ++c.tp;
    else if (d) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double calibrate_threshold_for_pfa(std::span<const double> negative_scores,
                                   double p_fa) {
  require(p_fa > 0.0 && p_fa < 1.0, ErrorKind::Domain, "p_fa must lie in (0, 1)");
  const auto needed = static_cast<std::size_t>(std::ceil(1.0 / p_fa - 1e-9));
  if (negative_scores.size() < needed) {
    fail(ErrorKind::Numeric, "calibration needs at least " + std::to_string(needed) +
                                 " negatives for p_fa " + fmt("%g", p_fa) + ", got " +
                                 std::to_string(negative_scores.size()));
  }
  return det::empirical_quantile({negative_scores.begin(), negative_scores.end()},
                                 1.0 - p_fa);
}

std::size_t Binning::count() const {
  require(width > 0.0 && hi > lo, ErrorKind::Config, "invalid SNR binning");
  return static_cast<std::size_t>(std::ceil((hi - lo) / width - 1e-9));
}

std::optional<std::size_t> Binning::index(double snr_db) const {
  if (!(snr_db >= lo && snr_db <= hi)) return std::nullopt;
  const auto i = static_cast<std::size_t>(std::floor((snr_db - lo) / width));
  return std::min(i, count() - 1);
}

std::vector<ReportRow> score_rows(const ScoreSet& set, const Binning& bins,
                                  double sample_spacing_m,
                                  std::vector<std::string>* warnings) {
  require(set.p_fa_levels.size() == set.thresholds.size(), ErrorKind::Shape,
          "score set levels and thresholds differ in length");
  const std::size_t nb = bins.count();
  std::vector<ReportRow> rows;
  for (std::size_t l = 0; l < set.p_fa_levels.size(); ++l) {
    const double tau = set.thresholds[l];
    std::vector<ReportRow> level(nb);
    std::vector<double> se_pos(nb, 0.0), se_refl(nb, 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
      level[b].detector = set.detector;
      level[b].variant = set.variant;
      level[b].p_fa_target = set.p_fa_levels[l];
      level[b].threshold = tau;
      level[b].snr_bin_db = bins.lower_edge(b);
    }
    for (const auto& it : set.items) {
      const auto b = bins.index(it.snr_db);
      if (!b) continue;
      auto& r = level[*b];
      const bool decided = it.score >= tau;
      if (it.cls == 1) {
        ++r.n_pos;
        if (!decided) {
          ++r.counts.fn;
          continue;
        }
        ++r.counts.tp;
        if (std::isfinite(it.position_idx_hat) && !std::isnan(it.position_idx)) {
          const double e = (it.position_idx_hat - it.position_idx) * sample_spacing_m;
          se_pos[*b] += e * e;
          ++r.n_position;
        }
        if (std::isfinite(it.reflectance_db_hat) && !std::isnan(it.reflectance_db)) {
          const double e = it.reflectance_db_hat - it.reflectance_db;
          se_refl[*b] += e * e;
          ++r.n_reflectance;
        }
      } else {
        ++r.n_neg;
        decided ? ++r.counts.fp : ++r.counts.tn;
      }
    }
    for (std::size_t b = 0; b < nb; ++b) {
      auto& r = level[b];
      r.p_d = r.counts.p_d();
      r.p_fa = r.counts.p_fa();
      if (r.n_position > 0) r.rmse_position_m = std::sqrt(se_pos[b] / double(r.n_position));
      if (r.n_reflectance > 0) {
        r.rmse_reflectance_db = std::sqrt(se_refl[b] / double(r.n_reflectance));
      }
      if (warnings && (r.n_pos == 0 || r.n_neg == 0) && l == 0) {
        warnings->push_back(set.detector + "/" + set.variant + ": SNR bin " +
                            fmt("%g", r.snr_bin_db) + " dB has " +
                            std::to_string(r.n_pos) + " positives and " +
                            std::to_string(r.n_neg) + " negatives");
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

ScoreSet score_ml(model::MultiTaskNet& net, const data::Dataset& test,
                  const data::Dataset& calibration,
                  std::span<const double> p_fa_levels) {
  ScoreSet set;
  set.detector = kMlName;
  set.variant = data::to_string(test.variant);

  std::vector<data::Sequence> negatives;
  for (auto i : calibration.indices(data::Split::Val)) {
    if (calibration.sequences[i].class_id == 0) negatives.push_back(calibration.sequences[i]);
  }
  std::vector<double> neg_scores;
  for (const auto& p : net.predict(negatives)) neg_scores.push_back(p.logit);
  for (double p_fa : p_fa_levels) {
    set.p_fa_levels.push_back(p_fa);
    set.thresholds.push_back(calibrate_threshold_for_pfa(neg_scores, p_fa));
  }

  const auto seqs = test_sequences(test);
  const auto preds = net.predict(seqs);
  set.items.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto it = truth_of(seqs[i]);
    it.score = preds[i].logit;
    it.position_idx_hat = preds[i].position_idx_hat;
    it.reflectance_db_hat = preds[i].reflectance_db_hat;
    set.items.push_back(it);
  }
  return set;
}

ScoreSet score_glrt(const data::Dataset& test, std::span<const double> p_fa_levels,
                    std::size_t n_monte_carlo, std::uint64_t seed) {
  const auto tmpl = sim::build_pulse_template(test.config);
  ScoreSet set;
  set.detector = kGlrtName;
  set.variant = data::to_string(test.variant);
  for (double p_fa : p_fa_levels) {
    set.p_fa_levels.push_back(p_fa);
    set.thresholds.push_back(det::calibrate_glrt_threshold(p_fa, tmpl, n_monte_carlo, seed));
  }
  const auto seqs = test_sequences(test);
  std::vector<double> window(data::kWindow);
  for (const auto& s : seqs) {
    for (int k = 0; k < data::kWindow; ++k) {
      window[k] = test.normalizer.denormalize(s.values[k]);
    }
    const auto g = det::glrt_detect(window, tmpl, std::numeric_limits<double>::infinity());
    auto it = truth_of(s);
    it.score = g.statistic;
    it.position_idx_hat = g.position_idx_hat;
    it.reflectance_db_hat = kNaN;
    set.items.push_back(it);
  }
  return set;
}

ScoreSet at_level(const ScoreSet& set, double p_fa) {
  for (std::size_t l = 0; l < set.p_fa_levels.size(); ++l) {
    if (std::abs(set.p_fa_levels[l] - p_fa) < 1e-12) {
      ScoreSet out = set;
      out.p_fa_levels = {set.p_fa_levels[l]};
      out.thresholds = {set.thresholds[l]};
      return out;
    }
  }
  fail(ErrorKind::Config, set.detector + " has no threshold for p_fa " + fmt("%g", p_fa));
}

RawScores sweep_detection(const ScoreSet& ml, const Binning& bins,
                          double sample_spacing_m) {
  return {"detect", bins, sample_spacing_m, {ml}};
}

RawScores sweep_localization(std::span<const ScoreSet> variants, double p_fa,
                             const Binning& bins, double sample_spacing_m) {
  RawScores raw{"localize", bins, sample_spacing_m, {}};
  for (const auto& v : variants) raw.sets.push_back(at_level(v, p_fa));
  return raw;
}

RawScores sweep_reflectance(const ScoreSet& ml, double p_fa, const Binning& bins,
                            double sample_spacing_m) {
  return {"reflectance", bins, sample_spacing_m, {at_level(ml, p_fa)}};
}

Comparison compare_detectors(const ScoreSet& ml, const ScoreSet& glrt,
                             const sim::SimConfig& cfg, double p_fa,
                             const Binning& bins, std::size_t mc_trials,
                             std::uint64_t seed) {
  Comparison c;
  c.raw = {"compare", bins, cfg.sample_spacing_m, {at_level(ml, p_fa), at_level(glrt, p_fa)}};
  for (std::size_t b = 0; b < bins.count(); ++b) {
    const double lo = bins.lower_edge(b);
    const double hi = std::min(lo + bins.width, bins.hi);
    BoundRow row;
    row.snr_bin_db = lo;
    row.analytic = det::optimum_bound_pd(0.5 * (lo + hi), p_fa);
    row.oracle = det::matched_filter_pd(cfg, lo, hi, p_fa, mc_trials,
                                        derive_seed(seed, b, stream::kMonteCarlo));
    c.bounds.push_back(row);
  }
  return c;
}

EvalReport report_from_scores(const RawScores& raw) {
  EvalReport r;
  for (const auto& set : raw.sets) {
    auto rows = score_rows(set, raw.bins, raw.sample_spacing_m, &r.warnings);
    r.rows.insert(r.rows.end(), rows.begin(), rows.end());
  }
  return r;
}

std::string report_csv(const EvalReport& report) {
  std::string out =
      "detector_name,dataset_variant,p_fa_target,threshold,snr_bin_db,n_pos,n_neg,"
      "tp,fn,fp,tn,p_d,p_fa,rmse_position_m,rmse_reflectance_db,n_position,"
      "n_reflectance\n";
  for (const auto& r : report.rows) {
    out += r.detector + "," + r.variant + "," + fmt("%g", r.p_fa_target) + "," +
           fmt("%.9g", r.threshold) + "," + fmt("%g", r.snr_bin_db) + "," +
           std::to_string(r.n_pos) + "," + std::to_string(r.n_neg) + "," +
           std::to_string(r.counts.tp) + "," + std::to_string(r.counts.fn) + "," +
           std::to_string(r.counts.fp) + "," + std::to_string(r.counts.tn) + "," +
           fixed(r.p_d) + "," + fixed(r.p_fa) + "," + fixed(r.rmse_position_m) + "," +
           fixed(r.rmse_reflectance_db) + "," + std::to_string(r.n_position) + "," +
           std::to_string(r.n_reflectance) + "\n";
  }
  return out;
}

std::string bound_rows_csv(std::span<const BoundRow> rows) {
  std::string out =
      "snr_bin_db,p_fa,delta,p_d_optimum_bound,p_d_matched_filter_mc,p_fa_matched_filter_mc,"
      "mc_trials,p_d_gap\n";
  for (const auto& r : rows) {
    out += fmt("%g", r.snr_bin_db) + "," + fmt("%g", r.analytic.p_fa) + "," +
           fmt("%.10g", r.analytic.delta) + "," + fmt("%.10g", r.analytic.p_d) + "," +
           fixed(r.oracle.p_d) + "," + fixed(r.oracle.p_fa_empirical) + "," +
           std::to_string(r.oracle.trials) + "," +
           fixed(r.oracle.p_d - r.analytic.p_d) + "\n";
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  io::write_text(path, report_csv(report));
}

// --- raw scores ------------------------------------------------------------

namespace {
constexpr char kRawMagic[8] = {'O', 'T', 'D', 'R', 'S', 'C', 'O', 'R'};

void put_string(io::ByteWriter& w, const std::string& s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::string get_string(io::ByteReader& r) {
  const auto n = r.get<std::uint32_t>();
  const auto bytes = r.get_bytes(n);
  return {bytes.begin(), bytes.end()};
}
}  // namespace

void save_raw_scores(const std::filesystem::path& path, const RawScores& raw) {
  io::ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kRawMagic), sizeof kRawMagic});
  w.put<std::uint32_t>(kRawScoresVersion);
  put_string(w, raw.kind);
  w.put<double>(raw.bins.lo);
  w.put<double>(raw.bins.hi);
  w.put<double>(raw.bins.width);
  w.put<double>(raw.sample_spacing_m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(raw.sets.size()));
  for (const auto& s : raw.sets) {
    put_string(w, s.detector);
    put_string(w, s.variant);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.p_fa_levels.size()));
    for (std::size_t l = 0; l < s.p_fa_levels.size(); ++l) {
      w.put<double>(s.p_fa_levels[l]);
      w.put<double>(s.thresholds[l]);
    }
    w.put<std::uint64_t>(s.items.size());
    for (const auto& it : s.items) {
      w.put<std::uint8_t>(it.cls);
      w.put<float>(it.snr_db);
      w.put<float>(it.position_idx);
      w.put<float>(it.reflectance_db);
      w.put<double>(it.score);
      w.put<double>(it.position_idx_hat);
      w.put<double>(it.reflectance_db_hat);
    }
  }
  const auto sum = data::fnv1a(w.bytes());
  w.put<std::uint64_t>(sum);
  io::write_file(path, w.bytes());
}

RawScores load_raw_scores(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  require(bytes.size() >= sizeof kRawMagic + 4 + 8, ErrorKind::Format,
          "raw score file is truncated");
  const std::span<const std::uint8_t> all(bytes);
  const auto body = all.first(bytes.size() - 8);
  io::ByteReader tail(all.last(8));
  require(data::fnv1a(body) == tail.get<std::uint64_t>(), ErrorKind::Format,
          "raw score checksum mismatch");

  io::ByteReader r(body);
  const auto magic = r.get_bytes(sizeof kRawMagic);
  require(std::equal(magic.begin(), magic.end(), kRawMagic), ErrorKind::Format,
          "not a raw score file");
  const auto version = r.get<std::uint32_t>();
  require(version == kRawScoresVersion, ErrorKind::Format,
          "unsupported raw score version " + std::to_string(version));
  RawScores raw;
  raw.kind = get_string(r);
  raw.bins.lo = r.get<double>();
  raw.bins.hi = r.get<double>();
  raw.bins.width = r.get<double>();
  raw.sample_spacing_m = r.get<double>();
  const auto n_sets = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_sets; ++k) {
    ScoreSet s;
    s.detector = get_string(r);
    s.variant = get_string(r);
    const auto levels = r.get<std::uint32_t>();
    for (std::uint32_t l = 0; l < levels; ++l) {
      s.p_fa_levels.push_back(r.get<double>());
      s.thresholds.push_back(r.get<double>());
    }
    const auto n = r.get<std::uint64_t>();
    require(n <= r.remaining(), ErrorKind::Format, "raw score item count is corrupt");
    s.items.resize(n);
    for (auto& it : s.items) {
      it.cls = r.get<std::uint8_t>();
      it.snr_db = r.get<float>();
      it.position_idx = r.get<float>();
      it.reflectance_db = r.get<float>();
      it.score = r.get<double>();
      it.position_idx_hat = r.get<double>();
      it.reflectance_db_hat = r.get<double>();
    }
    raw.sets.push_back(std::move(s));
  }
  require(r.remaining() == 0, ErrorKind::Format, "trailing bytes in raw score file");
  return raw;
}

// --- plots -----------------------------------------------------------------

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step) {
    t.push_back(std::abs(v) < 1e-12 ? 0.0 : v);
  }
  return t;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, std::span<const Series> series,
                           std::optional<std::pair<double, double>> y_range) {
  constexpr double W = 720, H = 440, L = 70, R = 190, T = 40, B = 55;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (y_range) std::tie(y0, y1) = *y_range;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.04 * (y1 - y0);
  if (!y_range) y0 -= pad, y1 += pad;

  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) { return fmt("%.2f", v); };

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) +
                  "\" height=\"" + num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num((W - R + L) / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(title) + "</text>\n";
  for (double t : nice_ticks(x0, x1)) {
    o += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(T) + "\" x2=\"" + num(px(t)) +
         "\" y2=\"" + num(H - B) + "\" stroke=\"#e5e5e5\"/>\n";
    o += "<text x=\"" + num(px(t)) + "\" y=\"" + num(H - B + 16) +
         "\" text-anchor=\"middle\">" + fmt("%g", t) + "</text>\n";
  }
  for (double t : nice_ticks(y0, y1)) {
    o += "<line x1=\"" + num(L) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(W - R) +
         "\" y2=\"" + num(py(t)) + "\" stroke=\"#e5e5e5\"/>\n";
    o += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(t) + 4) +
         "\" text-anchor=\"end\">" + fmt("%g", t) + "</text>\n";
  }
  o += "<rect x=\"" + num(L) + "\" y=\"" + num(T) + "\" width=\"" + num(W - L - R) +
       "\" height=\"" + num(H - T - B) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  o += "<text x=\"" + num((W - R + L) / 2) + "\" y=\"" + num(H - 14) +
       "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
  o += "<text transform=\"translate(18," + num((H - B + T) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(y_label) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = kColors[k % std::size(kColors)];
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) {
        o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" +
             pts + "\"/>\n";
      }
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) {
        flush();
        continue;
      }
      const double yc = std::clamp(s.y[i], y0, y1);
      pts += (pts.empty() ? "" : " ") + num(px(s.x[i])) + "," + num(py(yc));
      o += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(yc)) + "\" r=\"2.5\" fill=\"" +
           color + "\"/>\n";
    }
    flush();
    const double ly = T + 14 + 20 * double(k);
    o += "<line x1=\"" + num(W - R + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" +
         num(W - R + 36) + "\" y2=\"" + num(ly) + "\" stroke=\"" + color +
         "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + num(W - R + 42) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.label) +
         "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

namespace {
template <class F>
Series collect(const EvalReport& r, const std::string& detector,
               const std::string& variant, double p_fa, const std::string& label,
               double bin_width, F value) {
  Series s;
  s.label = label;
  for (const auto& row : r.rows) {
    if (row.detector != detector || row.variant != variant ||
        std::abs(row.p_fa_target - p_fa) > 1e-12) {
      continue;
    }
    s.x.push_back(row.snr_bin_db + 0.5 * bin_width);
    s.y.push_back(value(row));
  }
  return s;
}
}  // namespace

Series series_pd(const EvalReport& r, const std::string& detector,
                 const std::string& variant, double p_fa, const std::string& label,
                 double bin_width) {
  return collect(r, detector, variant, p_fa, label, bin_width,
                 [](const ReportRow& row) { return row.p_d; });
}

Series series_rmse(const EvalReport& r, const std::string& detector,
                   const std::string& variant, double p_fa, bool position,
                   const std::string& label, double bin_width) {
  return collect(r, detector, variant, p_fa, label, bin_width, [&](const ReportRow& row) {
    const auto& v = position ? row.rmse_position_m : row.rmse_reflectance_db;
    return v.value_or(kNaN);
  });
}

}  // namespace otdr::eval

namespace otdr::eval {

EvalReport write_outputs(const std::filesystem::path& dir, const RawScores& raw,
                         std::span<const BoundRow> bounds) {
  std::filesystem::create_directories(dir);
  const auto report = report_from_scores(raw);
  write_report_csv(dir / "report.csv", report);
  save_raw_scores(dir / "raw_scores.bin", raw);

  const double w = raw.bins.width;
  const std::string snr = "SNR (dB)";
  auto write_svg = [&](const char* name, const std::string& svg) {
    io::write_text(dir / name, svg);
  };
  auto level_label = [](const ScoreSet& s, double p) {
    return s.detector + " P_FA=" + fmt("%g", p);
  };

  std::vector<Series> pd, pos, refl;
  for (const auto& s : raw.sets) {
    for (double p : s.p_fa_levels) {
      const auto label = s.detector == kMlName && raw.kind != "compare"
                             ? s.variant + " P_FA=" + fmt("%g", p)
                             : level_label(s, p);
      pd.push_back(series_pd(report, s.detector, s.variant, p, label, w));
      pos.push_back(series_rmse(report, s.detector, s.variant, p, true, label, w));
      if (s.detector == kMlName) {
        refl.push_back(series_rmse(report, s.detector, s.variant, p, false, label, w));
      }
    }
  }

  const bool all = raw.kind == "pipeline";
  if (raw.kind == "detect" || all) {
    write_svg("fig4_pd_vs_snr.svg",
              svg_line_chart("Detection probability vs SNR", snr, "P_d", pd,
                             std::pair{0.0, 1.0}));
  }
  if (raw.kind == "localize" || all) {
    write_svg("fig5_pos_rmse.svg",
              svg_line_chart("Event position RMSE vs SNR", snr, "RMSE (m)", pos));
  }
  if (raw.kind == "reflectance" || all) {
    write_svg("fig6_refl_rmse.svg",
              svg_line_chart("Reflectance RMSE vs SNR", snr, "RMSE (dB)", refl));
  }
  if (raw.kind == "compare" || all) {
    std::vector<Series> cmp = pd;
    if (!bounds.empty()) {
      Series opt{"optimum bound", {}, {}}, mc{"matched filter (MC)", {}, {}};
      for (const auto& b : bounds) {
        opt.x.push_back(b.snr_bin_db + 0.5 * w);
        opt.y.push_back(b.analytic.p_d);
        mc.x.push_back(b.snr_bin_db + 0.5 * w);
        mc.y.push_back(b.oracle.p_d);
      }
      cmp.push_back(opt);
      cmp.push_back(mc);
      io::write_text(dir / "bounds.csv", bound_rows_csv(bounds));
    }
    write_svg("fig7_detector_comparison.svg",
              svg_line_chart("Detector comparison (whole patterns)", snr, "P_d", cmp,
                             std::pair{0.0, 1.0}));
    write_svg("fig8_position_comparison.svg",
              svg_line_chart("Peak position RMSE, ML vs GLRT", snr, "RMSE (m)", pos));
  }
  return report;
}

}  // namespace otdr::eval
