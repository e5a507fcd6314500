// otdr: simulate traces, build datasets, train the multi-task network,
// evaluate detectors and emit the optimum-detector bound.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "otdr/binary_io.hpp"
#include "otdr/config_json.hpp"
#include "otdr/dataset.hpp"
#include "otdr/detectors.hpp"
#include "otdr/error.hpp"
#include "otdr/evaluation.hpp"
#include "otdr/model.hpp"
#include "otdr/sim.hpp"

#ifndef OTDR_VERSION
#define OTDR_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace otdr;

namespace {

using Clock = std::chrono::steady_clock;

struct Manifest {
  explicit Manifest(std::string sub) : subcommand(std::move(sub)) {}

  std::string subcommand;
  json config = json::object();
  json inputs = json::object();
  std::vector<std::string> outputs;
  Clock::time_point start = Clock::now();

  void write(const fs::path& path) const {
    json j;
    j["subcommand"] = subcommand;
    j["tool_version"] = OTDR_VERSION;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["wall_clock_s"] = std::chrono::duration<double>(Clock::now() - start).count();
    io::write_text(path, j.dump(2) + "\n");
  }
};

std::string file_checksum(const fs::path& p) {
  return data::hex64(data::fnv1a(io::read_file(p)));
}

json read_json(const fs::path& p) {
  try {
    return json::parse(io::read_text(p));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, p.string() + ": " + e.what());
  }
}

// Config file: {"sim": {...}, "model": {...}}; a bare object is a SimConfig.
sim::SimConfig sim_from_file(const std::string& path) {
  if (path.empty()) return {};
  const auto j = read_json(path);
  if (j.contains("sim") || j.contains("model")) {
    return j.contains("sim") ? sim_config_from_json(j["sim"]) : sim::SimConfig{};
  }
  return sim_config_from_json(j);
}

model::ModelConfig model_from_file(const std::string& path) {
  if (path.empty()) return {};
  const auto j = read_json(path);
  if (j.contains("sim") || j.contains("model")) {
    return j.contains("model") ? model::model_config_from_json(j["model"])
                               : model::ModelConfig{};
  }
  return model::model_config_from_json(j);
}

std::vector<double> parse_list(const std::string& s, char sep) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorKind::Config, "bad number '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorKind::Config, "bad number '" + item + "' in '" + s + "'");
    }
  }
  return v;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::Domain:
      return 1;
    case ErrorKind::Data:
    case ErrorKind::Format:
    case ErrorKind::Shape:
    case ErrorKind::Placement:
      return 2;
    case ErrorKind::Numeric:
    case ErrorKind::State:
      return 3;
  }
  return 2;
}

void report_error(const char* kind, const std::string& msg) {
  std::string flat = msg;
  for (char& c : flat) {
    if (c == '\n' || c == '"') c = '\'';
  }
  std::cerr << "otdr: error kind=" << kind << " message=\"" << flat << "\"\n";
}

// --- simulate ----------------------------------------------------------------

struct SimulateOpts {
  std::string config, out;
  int traces = 100;
  std::optional<std::uint64_t> seed;
};

void run_simulate(const SimulateOpts& o) {
  Manifest m{"simulate"};
  auto cfg = sim_from_file(o.config);
  if (o.seed) cfg.rng_seed = *o.seed;
  require(o.traces >= 1, ErrorKind::Config, "--traces must be >= 1");
  const auto traces = sim::simulate_batch(cfg, o.traces);

  fs::create_directories(o.out);
  std::string csv =
      "id,seed,event_position_m,event_position_idx,reflectance_db,snr_db,amplitude,"
      "noise_sigma\n";
  io::ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(traces.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.trace_len_samples));
  char buf[256];
  for (const auto& t : traces) {
    std::snprintf(buf, sizeof buf, "%llu,%llu,%.6f,%.6f,%.6f,%.6f,%.9g,%.9g\n",
                  static_cast<unsigned long long>(t.id),
                  static_cast<unsigned long long>(t.seed), t.event_position_m,
                  t.event_position_idx, t.reflectance_db, t.snr_db, t.amplitude,
                  t.noise_sigma);
    csv += buf;
    for (double v : t.samples) w.put<double>(v);
  }
  io::write_text(fs::path(o.out) / "traces.csv", csv);
  io::write_file(fs::path(o.out) / "traces.bin", w.bytes());

  m.config = {{"sim", sim_config_to_json(cfg)}, {"traces", o.traces}};
  m.outputs = {"traces.csv", "traces.bin"};
  m.write(fs::path(o.out) / "run_manifest.json");
  std::cout << "simulated " << traces.size() << " traces -> " << o.out << "\n";
}

// --- dataset -------------------------------------------------------------------

struct DatasetOpts {
  std::string config, out, kind = "mixed";
  int traces = 3000;
  std::optional<std::uint64_t> seed;
};

void run_dataset(const DatasetOpts& o, bool variants) {
  Manifest m{variants ? "dataset variants" : "dataset build"};
  auto cfg = sim_from_file(o.config);
  if (o.seed) {
    cfg.rng_seed = *o.seed;
  } else if (variants) {
    // Fresh traces by default, so evaluation never reuses training traces.
    cfg.rng_seed = derive_seed(cfg.rng_seed, 0, stream::kEvalVariants);
  }
  const auto variant = variants ? data::variant_from_string(o.kind) : data::Variant::Mixed;
  const auto ds = data::build_dataset(cfg, o.traces, variant);
  data::save_dataset(ds, o.out);

  m.config = {{"sim", sim_config_to_json(cfg)},
              {"traces", o.traces},
              {"variant", data::to_string(variant)}};
  m.outputs = {"manifest.json", "sequences.bin", "split.csv"};
  m.write(fs::path(o.out) / "run_manifest.json");
  std::cout << "dataset " << data::to_string(variant) << ": " << ds.sequences.size()
            << " sequences (train " << ds.count(data::Split::Train) << ", val "
            << ds.count(data::Split::Val) << ", test " << ds.count(data::Split::Test)
            << ") checksum " << data::hex64(ds.checksum()) << " -> " << o.out << "\n";
}

// --- train ---------------------------------------------------------------------

struct TrainOpts {
  std::string dataset, out, config, lambda;
  std::optional<double> lr, dropout, lr_decay;
  std::optional<int> batch, epochs, patience;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void run_train(const TrainOpts& o) {
  Manifest m{"train"};
  const auto ds = data::load_dataset(o.dataset);
  auto mc = model_from_file(o.config);
  mc.reflectance_range = ds.config.reflectance_db_range;
  if (o.lr) mc.lr = *o.lr;
  if (o.dropout) mc.dropout = *o.dropout;
  if (o.lr_decay) mc.lr_decay = *o.lr_decay;
  if (o.batch) mc.batch_size = *o.batch;
  if (o.epochs) mc.max_epochs = *o.epochs;
  if (o.patience) mc.patience = *o.patience;
  if (o.seed) mc.seed = *o.seed;
  if (!o.lambda.empty()) {
    const auto l = parse_list(o.lambda, ',');
    require(l.size() == 3, ErrorKind::Config, "--lambda needs three comma-separated weights");
    mc.loss_weights = {l[0], l[1], l[2]};
  }
  mc.validate();

  const auto result = model::train(ds, mc, [&](const model::EpochRecord& e) {
    if (o.quiet) return;
    std::printf("epoch %3d  train %.5f  val %.5f (bce %.4f pos %.4f refl %.4f)\n", e.epoch,
                e.train.total, e.val.total, e.val.bce, e.val.mse_position,
                e.val.mse_reflectance);
    std::fflush(stdout);
  });

  const fs::path out(o.out);
  fs::create_directories(out);
  result.net->save(out / "model.ckpt");
  model::write_history_csv(out / "history.csv", result.history);
  io::write_text(out / "model.json", model::to_json(mc).dump(2) + "\n");

  m.config = {{"model", model::to_json(mc)}, {"best_epoch", result.best_epoch},
              {"epochs_run", result.history.size()}};
  m.inputs = {{"dataset", o.dataset}, {"dataset_checksum", data::hex64(ds.checksum())}};
  m.outputs = {"model.ckpt", "history.csv", "model.json"};
  m.write(out / "run_manifest.json");
  std::cout << "trained " << result.history.size() << " epochs, best " << result.best_epoch
            << " -> " << (out / "model.ckpt").string() << "\n";
}

// --- eval ----------------------------------------------------------------------

struct EvalOpts {
  std::string model, model_config, out, calib;
  std::vector<std::string> datasets;
  double pfa = 0.1;
  std::string levels = "0.01,0.05,0.1";
  std::size_t glrt_trials = 20000;
  std::size_t mc_trials = 20000;
  std::uint64_t seed = 7;
  double bin_width = 1.0;
};

std::unique_ptr<model::MultiTaskNet> load_net(const EvalOpts& o) {
  const fs::path cfg_path =
      o.model_config.empty() ? fs::path(o.model).parent_path() / "model.json"
                             : fs::path(o.model_config);
  auto net = std::make_unique<model::MultiTaskNet>(model_from_file(cfg_path.string()));
  net->load(o.model);
  return net;
}

void run_eval(const std::string& kind, const EvalOpts& o) {
  Manifest m{"eval " + kind};
  require(!o.datasets.empty(), ErrorKind::Config, "--dataset is required");
  require(kind == "localize" || o.datasets.size() == 1, ErrorKind::Config,
          "eval " + kind + " takes exactly one --dataset");

  auto net = load_net(o);
  std::vector<data::Dataset> sets;
  for (const auto& d : o.datasets) sets.push_back(data::load_dataset(d));
  const auto calib = o.calib.empty() ? std::optional<data::Dataset>{}
                                     : std::optional{data::load_dataset(o.calib)};
  const auto& cfg = sets.front().config;
  const eval::Binning bins{cfg.snr_db_range[0], cfg.snr_db_range[1], o.bin_width};

  std::vector<double> levels = parse_list(o.levels, ',');
  if (std::find(levels.begin(), levels.end(), o.pfa) == levels.end()) levels.push_back(o.pfa);
  std::sort(levels.begin(), levels.end());

  auto score = [&](const data::Dataset& ds, std::span<const double> lv) {
    return eval::score_ml(*net, ds, calib ? *calib : ds, lv);
  };
  const double one[] = {o.pfa};

  eval::RawScores raw;
  std::vector<eval::BoundRow> bounds;
  if (kind == "detect") {
    raw = eval::sweep_detection(score(sets[0], levels), bins, cfg.sample_spacing_m);
  } else if (kind == "localize") {
    std::vector<eval::ScoreSet> scored;
    for (const auto& ds : sets) scored.push_back(score(ds, one));
    raw = eval::sweep_localization(scored, o.pfa, bins, cfg.sample_spacing_m);
  } else if (kind == "reflectance") {
    raw = eval::sweep_reflectance(score(sets[0], one), o.pfa, bins, cfg.sample_spacing_m);
  } else {
    const auto glrt = eval::score_glrt(sets[0], one, o.glrt_trials, o.seed);
    auto cmp = eval::compare_detectors(score(sets[0], one), glrt, cfg, o.pfa, bins,
                                       o.mc_trials, o.seed);
    raw = std::move(cmp.raw);
    bounds = std::move(cmp.bounds);
  }
  const auto report = eval::write_outputs(o.out, raw, bounds);
  for (const auto& w : report.warnings) std::cerr << "otdr: warning " << w << "\n";

  m.config = {{"p_fa", o.pfa}, {"levels", levels}, {"bin_width_db", o.bin_width},
              {"glrt_trials", o.glrt_trials}, {"mc_trials", o.mc_trials}, {"seed", o.seed}};
  m.inputs["model"] = o.model;
  m.inputs["model_checksum"] = file_checksum(o.model);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    m.inputs["datasets"].push_back(
        {{"path", o.datasets[i]}, {"checksum", data::hex64(sets[i].checksum())}});
  }
  if (calib) m.inputs["calibration"] = {{"path", o.calib}, {"checksum", data::hex64(calib->checksum())}};
  for (const auto& e : fs::directory_iterator(o.out)) {
    if (e.path().filename() != "run_manifest.json") m.outputs.push_back(e.path().filename().string());
  }
  std::sort(m.outputs.begin(), m.outputs.end());
  m.write(fs::path(o.out) / "run_manifest.json");
  std::cout << "eval " << kind << ": " << report.rows.size() << " rows -> " << o.out << "\n";
}

void run_regen(const std::string& scores, const std::string& out) {
  Manifest m{"eval regen"};
  const auto raw = eval::load_raw_scores(scores);
  eval::write_outputs(out, raw);
  m.inputs = {{"raw_scores", scores}, {"checksum", file_checksum(scores)}};
  m.outputs = {"report.csv", "raw_scores.bin"};
  m.write(fs::path(out) / "run_manifest.json");
  std::cout << "regenerated " << raw.kind << " report -> " << out << "\n";
}

// --- bound ---------------------------------------------------------------------

struct BoundOpts {
  double pfa = 0.1;
  std::string snr = "0:30:0.5", out, config;
  std::size_t mc_trials = 10000;
  std::uint64_t seed = 11;
};

void run_bound(const BoundOpts& o) {
  Manifest m{"bound"};
  const auto r = parse_list(o.snr, ':');
  require(r.size() == 3 && r[2] > 0.0 && r[1] >= r[0], ErrorKind::Config,
          "--snr expects lo:hi:step with step > 0 and hi >= lo");
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor((r[1] - r[0]) / r[2] + 1e-9)) + 1;
  for (std::size_t i = 0; i < n; ++i) grid.push_back(r[0] + r[2] * double(i));

  const auto cfg = sim_from_file(o.config);
  const auto rows = det::bound_curve(cfg, o.pfa, grid, o.mc_trials, o.seed);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  det::write_bound_csv(out, rows);

  m.config = {{"p_fa", o.pfa}, {"snr", o.snr}, {"mc_trials", o.mc_trials},
              {"seed", o.seed}, {"sim", sim_config_to_json(cfg)}};
  m.outputs = {out.filename().string()};
  m.write(fs::path(out.string() + ".manifest.json"));
  std::cout << "bound: " << rows.size() << " rows -> " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OTDR reflective event toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Thread cap (the toolkit runs single-threaded)")
      ->check(CLI::PositiveNumber);
  app.set_version_flag("--version", OTDR_VERSION);

  SimulateOpts sim_o;
  auto* simulate = app.add_subcommand("simulate", "Simulate a batch of traces");
  simulate->add_option("--config", sim_o.config, "JSON config file");
  simulate->add_option("--traces", sim_o.traces, "Number of traces");
  simulate->add_option("--out", sim_o.out, "Output directory")->required();
  simulate->add_option("--seed", sim_o.seed, "Base seed");

  DatasetOpts ds_o;
  auto* dataset = app.add_subcommand("dataset", "Build sequence datasets");
  dataset->require_subcommand(1);
  auto* build = dataset->add_subcommand("build", "Mixed whole/partial training dataset");
  auto* variants = dataset->add_subcommand("variants", "Evaluation dataset of one kind");
  for (auto* sc : {build, variants}) {
    sc->add_option("--config", ds_o.config, "JSON config file");
    sc->add_option("--traces", ds_o.traces, "Number of traces")->check(CLI::Range(5, 10'000'000));
    sc->add_option("--out", ds_o.out, "Output directory")->required();
    sc->add_option("--seed", ds_o.seed, "Base seed");
  }
  variants->add_option("--kind", ds_o.kind, "whole | partial | mixed")
      ->check(CLI::IsMember({"whole", "partial", "mixed"}));

  TrainOpts tr_o;
  auto* train = app.add_subcommand("train", "Train the multi-task network");
  train->add_option("--dataset", tr_o.dataset, "Dataset directory")->required();
  train->add_option("--out", tr_o.out, "Output directory")->required();
  train->add_option("--config", tr_o.config, "JSON model config");
  train->add_option("--lr", tr_o.lr, "Adam learning rate");
  train->add_option("--lr-decay", tr_o.lr_decay, "Per-epoch learning-rate factor");
  train->add_option("--dropout", tr_o.dropout, "Dropout rate");
  train->add_option("--batch", tr_o.batch, "Mini-batch size");
  train->add_option("--epochs", tr_o.epochs, "Maximum epochs");
  train->add_option("--patience", tr_o.patience, "Early-stopping patience");
  train->add_option("--lambda", tr_o.lambda, "Loss weights l1,l2,l3");
  train->add_option("--seed", tr_o.seed, "Initialisation/shuffle seed");
  train->add_flag("--quiet", tr_o.quiet, "No per-epoch output");

  EvalOpts ev_o;
  std::string regen_scores;
  auto* ev = app.add_subcommand("eval", "Evaluate detectors");
  ev->require_subcommand(1);
  std::vector<CLI::App*> eval_cmds;
  for (const char* name : {"detect", "localize", "reflectance", "compare"}) {
    auto* sc = ev->add_subcommand(name);
    sc->add_option("--model", ev_o.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    sc->add_option("--model-config", ev_o.model_config, "Model JSON (default: beside checkpoint)");
    sc->add_option("--dataset", ev_o.datasets, "Dataset directory (repeatable)")->required();
    sc->add_option("--calib", ev_o.calib, "Dataset whose validation negatives set thresholds");
    sc->add_option("--pfa", ev_o.pfa, "False-alarm target")->check(CLI::Range(1e-6, 0.5));
    sc->add_option("--out", ev_o.out, "Output directory")->required();
    sc->add_option("--bin-width", ev_o.bin_width, "SNR bin width (dB)")->check(CLI::PositiveNumber);
    if (std::string(name) == "detect") sc->add_option("--levels", ev_o.levels, "P_FA levels");
    if (std::string(name) == "compare") {
      sc->add_option("--glrt-trials", ev_o.glrt_trials, "GLRT calibration windows");
      sc->add_option("--mc-trials", ev_o.mc_trials, "Matched-filter trials per bin");
      sc->add_option("--seed", ev_o.seed, "Monte Carlo seed");
    }
    eval_cmds.push_back(sc);
  }
  std::string regen_out;
  auto* regen = ev->add_subcommand("regen", "Rebuild a report from raw_scores.bin");
  regen->add_option("--scores", regen_scores, "raw_scores.bin")->required()->check(CLI::ExistingFile);
  regen->add_option("--out", regen_out, "Output directory")->required();

  BoundOpts bd_o;
  auto* bound = app.add_subcommand("bound", "Optimum-detector bound and matched-filter oracle");
  bound->add_option("--pfa", bd_o.pfa, "False-alarm probability");
  bound->add_option("--snr", bd_o.snr, "lo:hi:step in dB");
  bound->add_option("--out", bd_o.out, "Output CSV file")->required();
  bound->add_option("--mc-trials", bd_o.mc_trials, "Monte Carlo trials per point");
  bound->add_option("--seed", bd_o.seed, "Monte Carlo seed");
  bound->add_option("--config", bd_o.config, "JSON config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 1;
  }

  try {
    if (*simulate) run_simulate(sim_o);
    else if (*build) run_dataset(ds_o, false);
    else if (*variants) run_dataset(ds_o, true);
    else if (*train) run_train(tr_o);
    else if (*regen) run_regen(regen_scores, regen_out);
    else if (*bound) run_bound(bd_o);
    else {
      for (auto* sc : eval_cmds) {
        if (*sc) run_eval(sc->get_name(), ev_o);
      }
    }
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    report_error("config", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("io", e.what());
    return 2;
  }
  return 0;
}
