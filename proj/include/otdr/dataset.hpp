#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otdr/sim.hpp"

namespace otdr::data {

inline constexpr int kWindow = 35;
inline constexpr int kPerTrace = 8;  // 4 negative + 4 positive windows
inline constexpr std::uint32_t kFormatVersion = 1;

enum class PatternKind : std::uint8_t { Whole = 0, Partial = 1, None = 2 };
enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
/// Which positive windows a dataset draws.
enum class Variant : std::uint8_t { Mixed = 0, Whole = 1, Partial = 2 };

const char* to_string(PatternKind k);
const char* to_string(Split s);
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Sequence {
  std::array<float, kWindow> values{};
  std::uint8_t class_id = 0;
  std::optional<float> position_idx;
  std::optional<float> reflectance_db;
  float snr_db = 0.0f;
  PatternKind pattern_kind = PatternKind::None;
  std::uint64_t source_trace_id = 0;
};

/// Fixed global mapping from linear detected power to [0, 1].
///
/// Values are log-compressed with asinh(v / reference) and scaled so that
/// -max_amplitude maps to 0, the zero baseline to 0.5 and the largest
/// noise-free peak (max_amplitude) to 1. Out-of-range samples saturate.
/// The reference sits `kReferenceOffsetDb` above the weakest peak: weak
/// events stay on the near-linear part of asinh, while the noise around
/// strong events is not blown up into full-scale swings.
struct Normalizer {
  static constexpr double kReferenceOffsetDb = 10.0;

  double max_amplitude = 1.0;
  double reference = 1e-3;

  static Normalizer from_config(const sim::SimConfig& cfg);

  double normalize(double v) const;
  double denormalize(double u) const;
  std::vector<double> normalize(std::span<const double> window) const;
  std::vector<double> denormalize(std::span<const double> window) const;
};

struct Dataset {
  sim::SimConfig config;
  Variant variant = Variant::Mixed;
  int n_traces = 0;
  Normalizer normalizer;
  std::vector<Sequence> sequences;
  std::vector<Split> split;  // parallel to sequences

  std::size_t count(Split s) const;
  std::vector<std::size_t> indices(Split s) const;
  std::uint64_t checksum() const;
};

/// Draws 4 negative and 4 positive windows (negatives first).
std::vector<Sequence> extract_sequences(const sim::Trace& trace,
                                        const Normalizer& norm, Rng& rng,
                                        Variant variant = Variant::Mixed);

Dataset build_dataset(const sim::SimConfig& cfg, int n_traces,
                      Variant variant = Variant::Mixed);

struct EvalVariants {
  Dataset whole, partial, mixed;
};
EvalVariants build_eval_variants(const sim::SimConfig& cfg, int n_traces);

// Persistence: manifest.json + sequences.bin + split.csv in one directory.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_sequences(std::span<const Sequence> seqs);
std::vector<Sequence> decode_sequences(std::span<const std::uint8_t> bytes);

/// FNV-1a 64.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace otdr::data
