#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "otdr/config_json.hpp"
#include "otdr/dataset.hpp"
#include "otdr/detectors.hpp"
#include "otdr/error.hpp"
#include "otdr/evaluation.hpp"
#include "otdr/model.hpp"
#include "otdr/sim.hpp"

namespace py = pybind11;
using namespace otdr;

namespace {

// Configs cross the boundary as JSON text; the Python side wraps dicts.
sim::SimConfig sim_config(const std::string& json_text) {
  return json_text.empty() ? sim::SimConfig{}
                           : sim_config_from_json(nlohmann::json::parse(json_text));
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<double> from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  require(a.ndim() == 1, ErrorKind::Shape, "expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

py::dict trace_dict(const sim::Trace& t) {
  py::dict d;
  d["samples"] = to_array(t.samples);
  d["event_position_m"] = t.event_position_m;
  d["event_position_idx"] = t.event_position_idx;
  d["reflectance_db"] = t.reflectance_db;
  d["snr_db"] = t.snr_db;
  d["seed"] = t.seed;
  d["amplitude"] = t.amplitude;
  d["noise_sigma"] = t.noise_sigma;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "OTDR reflective event toolkit (native core)";

  static py::exception<Error> exc(m, "OtdrError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const char* kind = to_string(e.kind());
      py::object err = py::handle(exc)(std::string(kind) + ": " + e.what());
      err.attr("kind") = kind;
      PyErr_SetObject(exc.ptr(), err.ptr());
    }
  });

  m.def("default_sim_config", [] { return sim_config_to_json(sim::SimConfig{}).dump(); });

  m.def(
      "pulse_template",
      [](const std::string& cfg) {
        const auto t = sim::build_pulse_template(sim_config(cfg));
        py::dict d;
        d["samples"] = to_array(t.samples);
        d["peak_offset"] = t.peak_offset;
        d["extent_samples"] = t.extent_samples;
        d["energy"] = t.energy();
        return d;
      },
      py::arg("config_json") = "");

  m.def(
      "simulate_trace",
      [](double snr_db, double reflectance_db, double position_m, std::uint64_t seed,
         const std::string& cfg) {
        return trace_dict(sim::simulate_trace(sim_config(cfg), snr_db, reflectance_db,
                                              position_m, seed));
      },
      py::arg("snr_db"), py::arg("reflectance_db"), py::arg("position_m"), py::arg("seed"),
      py::arg("config_json") = "");

  m.def(
      "simulate_batch",
      [](int n, const std::string& cfg) {
        py::list out;
        for (const auto& t : sim::simulate_batch(sim_config(cfg), n)) out.append(trace_dict(t));
        return out;
      },
      py::arg("n_traces"), py::arg("config_json") = "");

  m.def(
      "dataset_summary",
      [](int n, const std::string& cfg) {
        const auto ds = data::build_dataset(sim_config(cfg), n);
        py::dict d;
        d["n_sequences"] = ds.sequences.size();
        d["train"] = ds.count(data::Split::Train);
        d["val"] = ds.count(data::Split::Val);
        d["test"] = ds.count(data::Split::Test);
        d["checksum"] = data::hex64(ds.checksum());
        return d;
      },
      py::arg("n_traces"), py::arg("config_json") = "");

  m.def(
      "normalize",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> v, const std::string& cfg) {
        return to_array(data::Normalizer::from_config(sim_config(cfg)).normalize(from_array(v)));
      },
      py::arg("values"), py::arg("config_json") = "");

  m.def(
      "optimum_bound",
      [](double snr_db, double p_fa) {
        const auto b = det::optimum_bound_pd(snr_db, p_fa);
        return py::make_tuple(b.delta, b.p_d);
      },
      py::arg("snr_db"), py::arg("p_fa"));

  m.def(
      "matched_filter_pd",
      [](double snr_db, double p_fa, std::size_t trials, std::uint64_t seed,
         const std::string& cfg) {
        const auto c = sim_config(cfg);
        const auto mc = det::matched_filter_pd(c, snr_db, p_fa, trials, seed);
        const auto closed = det::matched_filter_pd_closed_form(sim::build_pulse_template(c),
                                                               snr_db, p_fa);
        return py::make_tuple(mc.p_d, mc.p_fa_empirical, closed);
      },
      py::arg("snr_db"), py::arg("p_fa"), py::arg("trials"), py::arg("seed"),
      py::arg("config_json") = "");

  m.def(
      "glrt_detect",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> window, double tau,
         const std::string& cfg) {
        const auto g = det::glrt_detect(from_array(window),
                                        sim::build_pulse_template(sim_config(cfg)), tau);
        py::dict d;
        d["detected"] = g.detected;
        d["statistic"] = g.statistic;
        d["position_idx_hat"] = g.position_idx_hat;
        d["amplitude_hat"] = g.amplitude_hat;
        return d;
      },
      py::arg("window"), py::arg("tau"), py::arg("config_json") = "");

  m.def(
      "calibrate_glrt_threshold",
      [](double p_fa, std::size_t n, std::uint64_t seed, const std::string& cfg) {
        return det::calibrate_glrt_threshold(p_fa, sim::build_pulse_template(sim_config(cfg)),
                                             n, seed);
      },
      py::arg("p_fa"), py::arg("n_monte_carlo"), py::arg("seed"), py::arg("config_json") = "");

  py::class_<model::MultiTaskNet>(m, "Model")
      .def(py::init([](const std::string& cfg) {
             model::ModelConfig mc;
             if (!cfg.empty()) mc = model::model_config_from_json(nlohmann::json::parse(cfg));
             return std::make_unique<model::MultiTaskNet>(mc);
           }),
           py::arg("config_json") = "")
      .def("load", [](model::MultiTaskNet& n, const std::filesystem::path& p) { n.load(p); })
      .def("parameter_count", &model::MultiTaskNet::parameter_count)
      .def("describe", &model::MultiTaskNet::describe)
      .def("predict",
           [](model::MultiTaskNet& n,
              py::array_t<double, py::array::c_style | py::array::forcecast> x) {
             require(x.ndim() == 2 && x.shape(1) == data::kWindow, ErrorKind::Shape,
                     "predict expects an (n, 35) array");
             std::vector<std::array<double, data::kWindow>> w(x.shape(0));
             for (std::size_t i = 0; i < w.size(); ++i)
               std::copy_n(x.data() + i * data::kWindow, data::kWindow, w[i].begin());
             const auto preds = n.predict(w);
             py::array_t<double> out({static_cast<py::ssize_t>(preds.size()), py::ssize_t{4}});
             auto o = out.mutable_unchecked<2>();
             for (std::size_t i = 0; i < preds.size(); ++i) {
               o(i, 0) = preds[i].p_event;
               o(i, 1) = preds[i].logit;
               o(i, 2) = preds[i].position_idx_hat;
               o(i, 3) = preds[i].reflectance_db_hat;
             }
             return out;
           });

  m.def("load_raw_scores", [](const std::filesystem::path& p) {
    const auto raw = eval::load_raw_scores(p);
    py::list sets;
    for (const auto& set : raw.sets) {
      const auto n = static_cast<py::ssize_t>(set.items.size());
      py::array_t<int> cls(n);
      py::array_t<double> snr(n), pos(n), refl(n), score(n), pos_hat(n), refl_hat(n);
      for (py::ssize_t i = 0; i < n; ++i) {
        const auto& it = set.items[i];
        cls.mutable_at(i) = it.cls;
        snr.mutable_at(i) = it.snr_db;
        pos.mutable_at(i) = it.position_idx;
        refl.mutable_at(i) = it.reflectance_db;
        score.mutable_at(i) = it.score;
        pos_hat.mutable_at(i) = it.position_idx_hat;
        refl_hat.mutable_at(i) = it.reflectance_db_hat;
      }
      py::dict d;
      d["detector"] = set.detector;
      d["variant"] = set.variant;
      d["p_fa_levels"] = set.p_fa_levels;
      d["thresholds"] = set.thresholds;
      d["class_id"] = cls;
      d["snr_db"] = snr;
      d["position_idx"] = pos;
      d["reflectance_db"] = refl;
      d["score"] = score;
      d["position_idx_hat"] = pos_hat;
      d["reflectance_db_hat"] = refl_hat;
      sets.append(d);
    }
    py::dict out;
    out["kind"] = raw.kind;
    out["sample_spacing_m"] = raw.sample_spacing_m;
    out["sets"] = sets;
    return out;
  });

  m.def("report_from_raw_scores", [](const std::filesystem::path& p) {
    return eval::report_csv(eval::report_from_scores(eval::load_raw_scores(p)));
  });
}
