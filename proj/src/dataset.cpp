#include "otdr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "otdr/binary_io.hpp"
#include "otdr/config_json.hpp"
#include "otdr/error.hpp"

namespace otdr::data {

const char* to_string(PatternKind k) {
  switch (k) {
    case PatternKind::Whole: return "whole";
    case PatternKind::Partial: return "partial";
    case PatternKind::None: return "none";
  }
  return "?";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Mixed: return "mixed";
    case Variant::Whole: return "whole";
    case Variant::Partial: return "partial";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "mixed") return Variant::Mixed;
  if (s == "whole") return Variant::Whole;
  if (s == "partial") return Variant::Partial;
  fail(ErrorKind::Config, "unknown dataset variant '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Format, "unknown split '" + s + "'");
}

// --- normalization ---------------------------------------------------------

Normalizer Normalizer::from_config(const sim::SimConfig& cfg) {
  Normalizer n;
  n.max_amplitude = sim::reflectance_to_amplitude(cfg.reflectance_db_range[1]);
  n.reference = sim::reflectance_to_amplitude(cfg.reflectance_db_range[0]) *
                std::pow(10.0, kReferenceOffsetDb / 10.0);
  return n;
}

double Normalizer::normalize(double v) const {
  require(!std::isnan(v), ErrorKind::Data, "NaN sample in window");
  const double span = std::asinh(max_amplitude / reference);
  const double u = 0.5 + 0.5 * std::asinh(v / reference) / span;
  return std::clamp(u, 0.0, 1.0);
}

double Normalizer::denormalize(double u) const {
  const double span = std::asinh(max_amplitude / reference);
  return reference * std::sinh((2.0 * u - 1.0) * span);
}

std::vector<double> Normalizer::normalize(std::span<const double> window) const {
  std::vector<double> out(window.size());
  std::transform(window.begin(), window.end(), out.begin(),
                 [this](double v) { return normalize(v); });
  return out;
}

std::vector<double> Normalizer::denormalize(std::span<const double> window) const {
  std::vector<double> out(window.size());
  std::transform(window.begin(), window.end(), out.begin(),
                 [this](double u) { return denormalize(u); });
  return out;
}

// --- extraction ------------------------------------------------------------

namespace {

struct Interval {
  int lo, hi;  // inclusive; empty when hi < lo
  int size() const { return hi >= lo ? hi - lo + 1 : 0; }
};

Interval intersect(Interval a, Interval b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

int draw_from(std::span<const Interval> parts, Rng& rng) {
  int total = 0;
  for (const auto& p : parts) total += p.size();
  require(total > 0, ErrorKind::Data,
          "trace too short to place the requested windows");
  int k = std::uniform_int_distribution<int>(0, total - 1)(rng);
  for (const auto& p : parts) {
    if (k < p.size()) return p.lo + k;
    k -= p.size();
  }
  return parts.back().hi;  // unreachable
}

Sequence make_sequence(const sim::Trace& tr, const Normalizer& norm, int start,
                       bool positive) {
  Sequence s;
  for (int i = 0; i < kWindow; ++i) {
    s.values[i] = static_cast<float>(norm.normalize(tr.samples[start + i]));
  }
  s.snr_db = static_cast<float>(tr.snr_db);
  s.source_trace_id = tr.id;
  if (positive) {
    s.class_id = 1;
    const double rel = tr.event_position_idx - start;
    s.position_idx = static_cast<float>(std::clamp(rel, 0.0, double(kWindow - 1)));
    s.reflectance_db = static_cast<float>(tr.reflectance_db);
    const bool whole =
        tr.support_begin >= start && tr.support_end <= start + kWindow;
    s.pattern_kind = whole ? PatternKind::Whole : PatternKind::Partial;
  }
  return s;
}

}  // namespace

std::vector<Sequence> extract_sequences(const sim::Trace& trace,
                                        const Normalizer& norm, Rng& rng,
                                        Variant variant) {
  const int len = static_cast<int>(trace.samples.size());
  require(len >= kWindow, ErrorKind::Data, "trace shorter than one window");
  const Interval all{0, len - kWindow};

  const Interval neg[] = {
      intersect(all, {0, trace.support_begin - kWindow}),
      intersect(all, {trace.support_end, len - kWindow}),
  };
  const Interval mixed =
      intersect(all, {trace.core_begin - (kWindow - 1), trace.core_end - 1});
  const Interval whole =
      intersect(mixed, {trace.support_end - kWindow, trace.support_begin});

  std::vector<Interval> pos;
  switch (variant) {
    case Variant::Mixed: pos = {mixed}; break;
    case Variant::Whole: pos = {whole}; break;
    case Variant::Partial:
      if (whole.size() == 0) {
        pos = {mixed};
      } else {
        pos = {{mixed.lo, whole.lo - 1}, {whole.hi + 1, mixed.hi}};
      }
      break;
  }

  std::vector<Sequence> out;
  out.reserve(kPerTrace);
  for (int i = 0; i < kPerTrace / 2; ++i) {
    out.push_back(make_sequence(trace, norm, draw_from(neg, rng), false));
  }
  for (int i = 0; i < kPerTrace / 2; ++i) {
    out.push_back(make_sequence(trace, norm, draw_from(pos, rng), true));
  }
  return out;
}

// --- dataset construction --------------------------------------------------

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::uint64_t Dataset::checksum() const {
  return fnv1a(encode_sequences(sequences));
}

Dataset build_dataset(const sim::SimConfig& cfg, int n_traces, Variant variant) {
  require(n_traces >= 5, ErrorKind::Config, "build_dataset needs >= 5 traces");
  const auto tmpl = sim::build_pulse_template(cfg);

  Dataset ds;
  ds.config = cfg;
  ds.variant = variant;
  ds.n_traces = n_traces;
  ds.normalizer = Normalizer::from_config(cfg);

  // Split by trace so no trace contributes to two splits.
  std::vector<int> order(n_traces);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.rng_seed, 0, stream::kSplit));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<int>(std::llround(0.6 * n_traces));
  const auto n_val = static_cast<int>(std::llround(0.2 * n_traces));
  std::vector<Split> trace_split(n_traces);
  for (int k = 0; k < n_traces; ++k) {
    trace_split[order[k]] =
        k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
  }

  ds.sequences.reserve(static_cast<std::size_t>(n_traces) * kPerTrace);
  ds.split.reserve(ds.sequences.capacity());
  for (int i = 0; i < n_traces; ++i) {
    const auto trace = sim::simulate_indexed(cfg, tmpl, i);
    Rng rng(derive_seed(cfg.rng_seed, trace.id, stream::kExtract));
    for (auto& s : extract_sequences(trace, ds.normalizer, rng, variant)) {
      ds.sequences.push_back(s);
      ds.split.push_back(trace_split[i]);
    }
  }
  return ds;
}

EvalVariants build_eval_variants(const sim::SimConfig& cfg, int n_traces) {
  return {build_dataset(cfg, n_traces, Variant::Whole),
          build_dataset(cfg, n_traces, Variant::Partial),
          build_dataset(cfg, n_traces, Variant::Mixed)};
}

// --- persistence -----------------------------------------------------------

namespace {
constexpr std::size_t kRecordBytes = kWindow * 4 + 1 + 4 + 4 + 4 + 1 + 8;
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
}  // namespace

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

std::vector<std::uint8_t> encode_sequences(std::span<const Sequence> seqs) {
  io::ByteWriter w;
  for (const auto& s : seqs) {
    for (float v : s.values) w.put(v);
    w.put(s.class_id);
    w.put(s.position_idx.value_or(kNaN));
    w.put(s.reflectance_db.value_or(kNaN));
    w.put(s.snr_db);
    w.put(static_cast<std::uint8_t>(s.pattern_kind));
    w.put(s.source_trace_id);
  }
  return w.take();
}

std::vector<Sequence> decode_sequences(std::span<const std::uint8_t> bytes) {
  require(bytes.size() % kRecordBytes == 0, ErrorKind::Format,
          "sequences.bin size is not a multiple of the record size");
  io::ByteReader r(bytes);
  std::vector<Sequence> out(bytes.size() / kRecordBytes);
  for (auto& s : out) {
    for (float& v : s.values) v = r.get<float>();
    s.class_id = r.get<std::uint8_t>();
    const float pos = r.get<float>();
    const float refl = r.get<float>();
    if (!std::isnan(pos)) s.position_idx = pos;
    if (!std::isnan(refl)) s.reflectance_db = refl;
    s.snr_db = r.get<float>();
    const auto kind = r.get<std::uint8_t>();
    require(kind <= 2 && s.class_id <= 1, ErrorKind::Format,
            "corrupt sequence record");
    s.pattern_kind = static_cast<PatternKind>(kind);
    s.source_trace_id = r.get<std::uint64_t>();
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto bytes = encode_sequences(ds.sequences);
  io::write_file(dir / "sequences.bin", bytes);

  std::ostringstream csv;
  csv << "index,split\n";
  for (std::size_t i = 0; i < ds.split.size(); ++i) {
    csv << i << ',' << to_string(ds.split[i]) << '\n';
  }
  io::write_text(dir / "split.csv", csv.str());

  nlohmann::json m;
  m["format_version"] = kFormatVersion;
  m["sim"] = sim_config_to_json(ds.config);
  m["variant"] = to_string(ds.variant);
  m["n_traces"] = ds.n_traces;
  m["n_sequences"] = ds.sequences.size();
  m["split_sizes"] = {{"train", ds.count(Split::Train)},
                      {"val", ds.count(Split::Val)},
                      {"test", ds.count(Split::Test)}};
  m["normalization"] = {{"kind", "asinh"},
                        {"max_amplitude", ds.normalizer.max_amplitude},
                        {"reference", ds.normalizer.reference},
                        {"reference_offset_db", Normalizer::kReferenceOffsetDb}};
  m["record_bytes"] = kRecordBytes;
  m["checksum_fnv1a64"] = hex64(fnv1a(bytes));
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "manifest.json: " + std::string(e.what()));
  }
  require(m.contains("format_version") && m["format_version"].is_number_unsigned(),
          ErrorKind::Format, "manifest.json lacks format_version");
  const auto version = m["format_version"].get<std::uint32_t>();
  require(version == kFormatVersion, ErrorKind::Format,
          "unsupported dataset format version " + std::to_string(version));

  Dataset ds;
  try {
    ds.config = sim_config_from_json(m.at("sim"));
    ds.variant = variant_from_string(m.at("variant").get<std::string>());
    ds.n_traces = m.at("n_traces").get<int>();
    ds.normalizer.max_amplitude = m.at("normalization").at("max_amplitude").get<double>();
    ds.normalizer.reference = m.at("normalization").at("reference").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "manifest.json: " + std::string(e.what()));
  }

  const auto bytes = io::read_file(dir / "sequences.bin");
  require(hex64(fnv1a(bytes)) == m.value("checksum_fnv1a64", std::string{}),
          ErrorKind::Format, "sequences.bin checksum mismatch");
  ds.sequences = decode_sequences(bytes);
  require(ds.sequences.size() == m.value("n_sequences", std::size_t{0}),
          ErrorKind::Format, "sequence count disagrees with manifest");

  std::istringstream csv(io::read_text(dir / "split.csv"));
  std::string line;
  std::getline(csv, line);
  require(line == "index,split", ErrorKind::Format, "split.csv header");
  ds.split.assign(ds.sequences.size(), Split::Train);
  std::size_t seen = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, ErrorKind::Format, "split.csv row");
    const auto idx = std::stoull(line.substr(0, comma));
    require(idx < ds.split.size(), ErrorKind::Format, "split.csv index range");
    ds.split[idx] = split_from_string(line.substr(comma + 1));
    ++seen;
  }
  require(seen == ds.sequences.size(), ErrorKind::Format,
          "split.csv row count disagrees with sequences");
  return ds;
}

}  // namespace otdr::data
