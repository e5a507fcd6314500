#include "otdr/config_json.hpp"

#include <cmath>
#include <set>
#include <string>

#include "otdr/error.hpp"

namespace otdr {

nlohmann::json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return sim::kInf;
    if (s == "-inf") return -sim::kInf;
    fail(ErrorKind::Format, "expected a number, got \"" + s + "\"");
  }
  require(j.is_number(), ErrorKind::Format, "expected a number");
  return j.get<double>();
}

nlohmann::json sim_config_to_json(const sim::SimConfig& cfg) {
  return {
      {"pulse_width_s", cfg.pulse_width_s},
      {"bessel_bandwidth_hz", number_to_json(cfg.bandwidth_hz())},
      {"bessel_order", cfg.bessel_order},
      {"sample_spacing_m", cfg.sample_spacing_m},
      {"trace_len_samples", cfg.trace_len_samples},
      {"group_index", cfg.group_index},
      {"snr_db_range", {cfg.snr_db_range[0], cfg.snr_db_range[1]}},
      {"reflectance_db_range",
       {cfg.reflectance_db_range[0], cfg.reflectance_db_range[1]}},
      {"rng_seed", cfg.rng_seed},
  };
}

sim::SimConfig sim_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Format, "SimConfig must be a JSON object");
  static const std::set<std::string> known{
      "pulse_width_s",    "bessel_bandwidth_hz", "bessel_order",
      "sample_spacing_m", "trace_len_samples",   "group_index",
      "snr_db_range",     "reflectance_db_range", "rng_seed"};
  for (const auto& [key, _] : j.items()) {
    require(known.count(key) > 0, ErrorKind::Format,
            "unknown SimConfig field '" + key + "'");
  }

  sim::SimConfig cfg;
  try {
    if (j.contains("pulse_width_s")) cfg.pulse_width_s = j["pulse_width_s"].get<double>();
    if (j.contains("bessel_bandwidth_hz"))
      cfg.bessel_bandwidth_hz = number_from_json(j["bessel_bandwidth_hz"]);
    if (j.contains("bessel_order")) cfg.bessel_order = j["bessel_order"].get<int>();
    if (j.contains("sample_spacing_m"))
      cfg.sample_spacing_m = j["sample_spacing_m"].get<double>();
    if (j.contains("trace_len_samples"))
      cfg.trace_len_samples = j["trace_len_samples"].get<int>();
    if (j.contains("group_index")) cfg.group_index = j["group_index"].get<double>();
    if (j.contains("snr_db_range"))
      cfg.snr_db_range = j["snr_db_range"].get<std::array<double, 2>>();
    if (j.contains("reflectance_db_range"))
      cfg.reflectance_db_range = j["reflectance_db_range"].get<std::array<double, 2>>();
    if (j.contains("rng_seed")) cfg.rng_seed = j["rng_seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("SimConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace otdr
