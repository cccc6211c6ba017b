#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cpfc/analysis.hpp"
#include "cpfc/cli.hpp"
#include "cpfc/control.hpp"
#include "cpfc/errors.hpp"
#include "cpfc/metrics.hpp"
#include "cpfc/plant.hpp"
#include "cpfc/sim.hpp"
#include "cpfc/tuner.hpp"

namespace py = pybind11;
using namespace cpfc;

namespace {

LoopModel make_loop(const DerSet& set, Mask mask, double kp, double ki, const std::vector<double>& w, double b,
                    ModelType model, double t_com, double t_meas) {
  return build_loop(kp, ki, aggregate_plant(set, mask, w, b, model), t_com, t_meas);
}

py::dict trace_dict(const Trace& tr) {
  py::dict d;
  d["dt"] = tr.dt;
  d["t"] = tr.t;
  d["p_ref"] = tr.p_ref;
  d["p_meas"] = tr.p_meas;
  d["p_total"] = tr.p_total;
  d["p_y"] = tr.p_y;
  d["p_yi"] = tr.p_yi;
  d["mask"] = tr.mask;
  d["kp"] = tr.kp;
  d["ki"] = tr.ki;
  py::dict der;
  for (std::size_t i = 0; i < tr.der_names.size(); ++i) der[py::str(tr.der_names[i])] = tr.der[i];
  d["der"] = der;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gain-scheduled PI tuning for cross-voltage-level power flow control";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);

  py::enum_<DerKind>(m, "DerKind").value("WT", DerKind::WT).value("CHP", DerKind::CHP).value("PV", DerKind::PV);
  py::enum_<ModelType>(m, "ModelType")
      .value("PT1", ModelType::PT1)
      .value("PT2", ModelType::PT2)
      .value("RHPZ", ModelType::RHPZ);

  py::class_<DerSpec>(m, "DerSpec")
      .def(py::init<>())
      .def_readwrite("name", &DerSpec::name)
      .def_readwrite("kind", &DerSpec::kind)
      .def_readwrite("p_inst", &DerSpec::p_inst)
      .def_readwrite("t_delay", &DerSpec::t_delay)
      .def_readwrite("t_rise", &DerSpec::t_rise)
      .def_property_readonly("participation", &DerSpec::participation);

  py::class_<DerSet>(m, "DerSet")
      .def(py::init<std::vector<DerSpec>>())
      .def("__len__", &DerSet::size)
      .def("__getitem__", [](const DerSet& s, std::size_t i) {
        if (i >= s.size()) throw py::index_error();
        return s[i];
      })
      .def_property_readonly("full_mask", &DerSet::full_mask)
      .def("hash", &DerSet::hash);

  m.def("reference_fleet", &reference_fleet);
  m.def("load_der_table", &load_der_table, py::arg("path"));
  m.def("enumerate_combos", &enumerate_combos, py::arg("m"));
  m.def("time_constant", &time_constant, py::arg("t_rise"));

  py::class_<MarginReport>(m, "MarginReport")
      .def_readonly("disk_margin", &MarginReport::disk_margin)
      .def_readonly("gain_margin", &MarginReport::gain_margin)
      .def_readonly("phase_margin", &MarginReport::phase_margin)
      .def_readonly("delay_margin", &MarginReport::delay_margin);

  py::class_<StepMetrics>(m, "StepMetrics")
      .def_readonly("overshoot", &StepMetrics::overshoot)
      .def_readonly("rise_time", &StepMetrics::rise_time)
      .def_readonly("settling_time", &StepMetrics::settling_time)
      .def_readonly("final_value", &StepMetrics::final_value)
      .def_readonly("stable", &StepMetrics::stable);

  m.def(
      "margins",
      [](const DerSet& set, Mask mask, double kp, double ki, const std::vector<double>& w, double b, ModelType model,
         double t_com, double t_meas) {
        return classical_margins(make_loop(set, mask, kp, ki, w, b, model, t_com, t_meas));
      },
      py::arg("set"), py::arg("mask"), py::arg("kp"), py::arg("ki"), py::arg("w") = std::vector<double>{},
      py::arg("b") = 1.0, py::arg("model") = ModelType::PT1, py::arg("t_com") = kDefaultTcom,
      py::arg("t_meas") = kDefaultTmeas, py::call_guard<py::gil_scoped_release>());

  m.def(
      "step_response",
      [](const DerSet& set, Mask mask, double kp, double ki, const std::vector<double>& w, double b, ModelType model,
         double t_com, double t_meas) {
        SimOptions so;
        so.abort_magnitude = 10.0;
        const StepTrace tr =
            simulate_closed_loop_step(make_loop(set, mask, kp, ki, w, b, model, t_com, t_meas), 1.0, so);
        return std::make_pair(step_metrics(tr, 1.0), tr.y);
      },
      py::arg("set"), py::arg("mask"), py::arg("kp"), py::arg("ki"), py::arg("w") = std::vector<double>{},
      py::arg("b") = 1.0, py::arg("model") = ModelType::PT1, py::arg("t_com") = kDefaultTcom,
      py::arg("t_meas") = kDefaultTmeas, py::call_guard<py::gil_scoped_release>());

  py::class_<TuneConfig>(m, "TuneConfig")
      .def(py::init<>())
      .def_readwrite("disk_threshold", &TuneConfig::disk_threshold)
      .def_readwrite("overshoot_threshold", &TuneConfig::overshoot_threshold)
      .def_readwrite("coarse_step", &TuneConfig::coarse_step)
      .def_readwrite("fine_step", &TuneConfig::fine_step)
      .def_readwrite("t_com", &TuneConfig::t_com)
      .def_readwrite("t_meas", &TuneConfig::t_meas)
      .def_readwrite("threads", &TuneConfig::threads)
      .def("validate", &TuneConfig::validate);

  py::class_<CpEntry>(m, "CpEntry")
      .def_readonly("mask", &CpEntry::mask)
      .def_readonly("kp", &CpEntry::kp)
      .def_readonly("ki", &CpEntry::ki)
      .def_readonly("w", &CpEntry::w)
      .def_readonly("rise_time", &CpEntry::rise_time)
      .def_readonly("disk_margin", &CpEntry::disk_margin)
      .def_readonly("overshoot", &CpEntry::overshoot)
      .def_readonly("w_floored", &CpEntry::w_floored);

  py::class_<CpTable>(m, "CpTable")
      .def_readonly("der_count", &CpTable::der_count)
      .def_readonly("entries", &CpTable::entries)
      .def_readonly("failed", &CpTable::failed)
      .def("complete", &CpTable::complete)
      .def("at", &CpTable::at, py::arg("mask"))
      .def("to_json", &cp_table_to_json, py::arg("timestamp") = true);

  m.def("tune_mask", [](const DerSet& s, Mask mask, const TuneConfig& c) { return tune_mask(s, mask, c); },
        py::arg("set"), py::arg("mask"), py::arg("config") = TuneConfig{}, py::call_guard<py::gil_scoped_release>());
  m.def("tune_masks", [](const DerSet& s, const std::vector<Mask>& masks, const TuneConfig& c) {
        return tune_masks(s, masks, c);
      },
        py::arg("set"), py::arg("masks"), py::arg("config") = TuneConfig{}, py::call_guard<py::gil_scoped_release>());
  m.def("load_cp_table", &load_cp_table, py::arg("path"));
  m.def("cp_table_from_json", &cp_table_from_json, py::arg("text"), py::arg("origin") = "<cp>");

  m.def("integrator_reset", &integrator_reset, py::arg("x_i"), py::arg("ki_old"), py::arg("ki_new"));
  m.def("dispatch_setpoints", &dispatch_setpoints, py::arg("p_y"), py::arg("set"), py::arg("avail"),
        py::arg("t") = 0.0, py::arg("w") = std::vector<double>{}, py::arg("saturate") = false);

  m.def(
      "simulate",
      [](const DerSet& set, const CpTable& table, const std::string& scenario_json) {
        const Scenario sc = scenario_json.empty() ? wt_loss_scenario(set) : scenario_from_json(scenario_json, set);
        Trace tr;
        {
          py::gil_scoped_release release;
          tr = run_scenario(sc, set, table);
        }
        return trace_dict(tr);
      },
      py::arg("set"), py::arg("table"), py::arg("scenario_json") = "");

  py::class_<SweepRow>(m, "SweepRow")
      .def_readonly("mask", &SweepRow::mask)
      .def_readonly("disk_margin", &SweepRow::disk_margin)
      .def_readonly("gain_margin", &SweepRow::gain_margin)
      .def_readonly("phase_margin", &SweepRow::phase_margin)
      .def_readonly("delay_margin", &SweepRow::delay_margin)
      .def_readonly("overshoot", &SweepRow::overshoot)
      .def_readonly("rise_time", &SweepRow::rise_time)
      .def_readonly("settling_time", &SweepRow::settling_time)
      .def_readonly("stable", &SweepRow::stable);
  m.def("static_sweep",
        [](const DerSet& s, double kp, double ki) { return robustness_sweep(s, kp, ki); },
        py::arg("set"), py::arg("kp"), py::arg("ki"), py::call_guard<py::gil_scoped_release>());

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
