#include "cpfc/sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "cpfc/errors.hpp"
#include "cpfc/io.hpp"
#include "cpfc/metrics.hpp"

namespace cpfc {

std::string to_string(Fidelity f) { return f == Fidelity::Reference ? "reference" : "detailed"; }

Fidelity parse_fidelity(const std::string& text) {
  std::string t = text;
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "reference") return Fidelity::Reference;
  if (t == "detailed") return Fidelity::Detailed;
  throw ArgumentError("unknown fidelity '" + text + "' (expected reference or detailed)");
}

// ---------------------------------------------------------------------------

struct DerModel::Impl {
  SampleDelay delay;
  std::optional<DiscreteTf> linear;
  // direction-dependent first-order lag
  double tau_up = 0.0, tau_down = 0.0, dt = 0.0;
  double u_prev = 0.0, y_prev = 0.0;

  Impl(std::size_t n, double initial) : delay(n, initial) {}
};

DerModel::DerModel(const DerSpec& spec, Fidelity fidelity, double dt) {
  spec.validate();
  impl_ = std::make_unique<Impl>(delay_samples(spec.t_delay, dt), 0.0);
  const double t = time_constant(spec.t_rise);
  if (fidelity == Fidelity::Detailed && spec.kind == DerKind::WT) {
    const double scale = spec.t_rise / (0.5 * (kWtRiseUp + kWtRiseDown));
    impl_->tau_up = time_constant(kWtRiseUp * scale);
    impl_->tau_down = time_constant(kWtRiseDown * scale);
    impl_->dt = dt;
  } else if (fidelity == Fidelity::Detailed && spec.kind == DerKind::CHP) {
    const double a = t / 1.5291;
    impl_->linear.emplace(RationalTf({1.0}, {1.0, t / 0.7645, a * a}), dt);
  } else {
    impl_->linear.emplace(RationalTf::first_order(1.0, t), dt);
  }
}

DerModel::~DerModel() = default;
DerModel::DerModel(DerModel&&) noexcept = default;
DerModel& DerModel::operator=(DerModel&&) noexcept = default;

double DerModel::step(double setpoint) {
  auto& m = *impl_;
  const double u = m.delay.step(setpoint);
  if (m.linear) {
    y_ = m.linear->step(u);
  } else {
    const double tau = u >= m.y_prev ? m.tau_up : m.tau_down;
    const double den = 2.0 * tau + m.dt;
    y_ = (2.0 * tau - m.dt) / den * m.y_prev + m.dt / den * (u + m.u_prev);
    m.u_prev = u;
    m.y_prev = y_;
  }
  return y_;
}

void DerModel::reset_steady(double value) {
  auto& m = *impl_;
  m.delay.fill(value);
  if (m.linear) m.linear->reset_steady(value);
  m.u_prev = m.y_prev = value;
  y_ = value;
}

double detailed_der_step(DerModel& model, double input) { return model.step(input); }

// ---------------------------------------------------------------------------

void Scenario::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ArgumentError("scenario duration must be > 0");
  if (dt < 0.0 || !std::isfinite(dt)) throw ArgumentError("scenario dt must be >= 0 (0 = auto)");
  if (dt > 0.0 && duration < 10.0 * dt) throw ArgumentError("scenario duration must cover at least 10 steps");
  if (!(t_com >= 0.0) || !(t_meas >= 0.0)) throw ArgumentError("delays must be >= 0");
  auto check_times = [&](const auto& events, const char* what) {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const double t = events[i].first;
      if (!(t >= 0.0 && t <= duration)) throw ArgumentError(std::string(what) + " time outside [0, duration]");
      if (i > 0 && !(t > events[i - 1].first)) throw ArgumentError(std::string(what) + " times must be strictly increasing");
    }
  };
  check_times(ref_steps, "ref_steps");
  check_times(avail_events, "avail_events");
  for (const auto& [t, dp] : ref_steps)
    if (!std::isfinite(dp)) throw ArgumentError("ref_steps values must be finite");
}

Scenario wt_loss_scenario(const DerSet& set) {
  Scenario s;
  s.duration = 650.0;
  s.fidelity = Fidelity::Detailed;
  s.ref_steps = {{20.0, 1e6}, {120.0, -1e6}, {200.0, 1e6}, {420.0, -1e6}};
  Mask no_wt = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set[i].kind != DerKind::WT) no_wt |= Mask{1} << i;
  s.avail_events = {{0.0, set.full_mask()}, {170.0, no_wt}};
  return s;
}

std::size_t Trace::index(double time) const {
  if (t.empty()) throw ArgumentError("empty trace");
  const auto k = static_cast<long long>(std::llround(time / dt));
  return static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(t.size()) - 1));
}

Trace run_scenario(const Scenario& scenario, const DerSet& base_set, const CpTable& table) {
  scenario.validate();
  if (table.der_count != base_set.size())
    throw ConfigError("CP table covers " + std::to_string(table.der_count) + " DERs, DER table has " +
                      std::to_string(base_set.size()));

  std::vector<DerSpec> specs = base_set.specs();
  for (const auto& [name, sched] : scenario.schedules) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](const DerSpec& s) { return s.name == name; });
    if (it == specs.end()) throw ConfigError("schedule for unknown DER '" + name + "'");
    it->schedule = sched;
  }
  const DerSet set(std::move(specs));
  const std::size_t n_der = set.size();

  auto events = scenario.avail_events;
  if (events.empty() || events.front().first > 0.0) events.insert(events.begin(), {0.0, set.full_mask()});
  Mask reach = 0;
  for (const auto& [t, m] : events) {
    if ((m & ~set.full_mask()) != 0) throw ConfigError("availability mask " + std::to_string(m) + " out of range");
    if (m != 0) table.at(m);  // unreachable masks fail before simulating
    reach |= m;
  }

  double dt = scenario.dt;
  if (!(dt > 0.0)) {
    const Mask m = reach != 0 ? reach : set.full_mask();
    dt = auto_dt(build_loop(1.0, 1.0, aggregate_plant(set, m), scenario.t_com, scenario.t_meas));
  }
  const auto steps = static_cast<std::size_t>(std::llround(scenario.duration / dt));

  GainScheduledController ctrl(table);
  std::vector<DerModel> ders;
  std::vector<SampleDelay> comm;
  double p_total = 0.0;
  for (std::size_t d = 0; d < n_der; ++d) {
    ders.emplace_back(set[d], scenario.fidelity, dt);
    const double s0 = set[d].schedule_at(0.0);
    ders.back().reset_steady(s0);
    p_total += s0;
    comm.emplace_back(delay_samples(scenario.t_com, dt), 0.0);
  }
  SampleDelay meas(delay_samples(scenario.t_meas, dt), p_total);
  double p_ref = scenario.p_ref0.value_or(p_total);

  Trace tr;
  tr.dt = dt;
  for (const auto& s : set.specs()) tr.der_names.push_back(s.name);
  tr.der.assign(n_der, {});
  const std::size_t cap = steps + 1;
  for (auto* v : {&tr.t, &tr.p_ref, &tr.p_meas, &tr.p_total, &tr.p_y, &tr.p_yi, &tr.kp, &tr.ki}) v->reserve(cap);
  tr.mask.reserve(cap);
  for (auto& c : tr.der) c.reserve(cap);

  std::size_t next_ref = 0, next_avail = 0;
  double last_total = p_total;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    while (next_ref < scenario.ref_steps.size() &&
           static_cast<std::size_t>(std::llround(scenario.ref_steps[next_ref].first / dt)) <= k)
      p_ref += scenario.ref_steps[next_ref++].second;
    while (next_avail < events.size() && static_cast<std::size_t>(std::llround(events[next_avail].first / dt)) <= k)
      ctrl.set_availability(events[next_avail++].second);

    const double fb = meas.samples() > 0 ? meas.front() : last_total;
    const double p_y = ctrl.step(p_ref - fb, dt);
    const Mask mask = ctrl.mask();
    double total = 0.0;
    for (std::size_t d = 0; d < n_der; ++d) {
      const bool on = (mask >> d) & 1u;
      const double dev = on ? p_y * ctrl.w()[d] * set[d].participation() : 0.0;
      double sp = comm[d].step(dev) + set[d].schedule_at(t);
      if (scenario.saturate) sp = std::clamp(sp, -set[d].p_inst, set[d].p_inst);
      const double out = ders[d].step(sp);
      tr.der[d].push_back(out);
      total += out;
    }
    meas.step(total);
    last_total = total;

    tr.t.push_back(t);
    tr.p_ref.push_back(p_ref);
    tr.p_meas.push_back(fb);
    tr.p_total.push_back(total);
    tr.p_y.push_back(p_y);
    tr.p_yi.push_back(ctrl.state().integral_output());
    tr.mask.push_back(mask);
    tr.kp.push_back(ctrl.state().kp_active);
    tr.ki.push_back(ctrl.state().ki_active);
  }
  return tr;
}

// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::json;

double json_number(const json& j, const std::string& origin, const std::string& field) {
  if (!j.is_number()) throw ParseError(origin, field, "expected a number");
  return j.get<double>();
}

std::vector<std::pair<double, double>> json_pairs(const json& j, const std::string& origin, const std::string& field) {
  if (!j.is_array()) throw ParseError(origin, field, "expected [[t, value], ...]");
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    const std::string f = field + "[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2) throw ParseError(origin, f, "expected [t, value]");
    out.emplace_back(json_number(p[0], origin, f), json_number(p[1], origin, f));
  }
  return out;
}

}  // namespace

Scenario scenario_from_json(const std::string& text, const DerSet& set, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin, "<document>", e.what());
  }
  if (!doc.is_object()) throw ParseError(origin, "<document>", "expected an object");
  Scenario s;
  if (!doc.contains("duration_s")) throw ParseError(origin, "duration_s", "missing");
  s.duration = json_number(doc["duration_s"], origin, "duration_s");
  if (doc.contains("dt_s")) {
    const auto& v = doc["dt_s"];
    if (v.is_string()) {
      if (v.get<std::string>() != "auto") throw ParseError(origin, "dt_s", "expected a number or \"auto\"");
    } else {
      s.dt = json_number(v, origin, "dt_s");
      if (!(s.dt > 0.0)) throw ParseError(origin, "dt_s", "must be > 0");
    }
  }
  if (doc.contains("ref_steps")) s.ref_steps = json_pairs(doc["ref_steps"], origin, "ref_steps");
  if (doc.contains("p_ref0_w")) s.p_ref0 = json_number(doc["p_ref0_w"], origin, "p_ref0_w");
  if (doc.contains("avail_events")) {
    const auto& ev = doc["avail_events"];
    if (!ev.is_array()) throw ParseError(origin, "avail_events", "expected [[t, mask], ...]");
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const std::string f = "avail_events[" + std::to_string(i) + "]";
      const auto& p = ev[i];
      if (!p.is_array() || p.size() != 2) throw ParseError(origin, f, "expected [t, mask]");
      const double t = json_number(p[0], origin, f);
      Mask m = 0;
      if (p[1].is_array()) {
        if (p[1].size() != set.size()) throw ParseError(origin, f, "availability array needs one flag per DER");
        Availability a;
        for (const auto& b : p[1]) {
          if (!b.is_boolean()) throw ParseError(origin, f, "availability flags must be booleans");
          a.push_back(b.get<bool>());
        }
        m = availability_mask(a);
      } else if (p[1].is_number_unsigned()) {
        m = p[1].get<Mask>();
        if ((m & ~set.full_mask()) != 0) throw ParseError(origin, f, "mask has bits beyond the DER table");
      } else {
        throw ParseError(origin, f, "mask must be a non-negative integer or a boolean array");
      }
      s.avail_events.emplace_back(t, m);
    }
  }
  if (doc.contains("fidelity")) {
    if (!doc["fidelity"].is_string()) throw ParseError(origin, "fidelity", "expected a string");
    try {
      s.fidelity = parse_fidelity(doc["fidelity"].get<std::string>());
    } catch (const ArgumentError& e) {
      throw ParseError(origin, "fidelity", e.what());
    }
  }
  if (doc.contains("t_com_s")) s.t_com = json_number(doc["t_com_s"], origin, "t_com_s");
  if (doc.contains("t_meas_s")) s.t_meas = json_number(doc["t_meas_s"], origin, "t_meas_s");
  if (doc.contains("saturate")) {
    if (!doc["saturate"].is_boolean()) throw ParseError(origin, "saturate", "expected a boolean");
    s.saturate = doc["saturate"].get<bool>();
  }
  if (doc.contains("schedules")) {
    const auto& sch = doc["schedules"];
    if (!sch.is_object()) throw ParseError(origin, "schedules", "expected an object keyed by DER name");
    for (const auto& [name, val] : sch.items()) {
      const auto& specs = set.specs();
      if (std::none_of(specs.begin(), specs.end(), [&](const DerSpec& d) { return d.name == name; }))
        throw ParseError(origin, "schedules." + name, "unknown DER");
      s.schedules[name] = json_pairs(val, origin, "schedules." + name);
    }
  }
  try {
    s.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(origin, "<scenario>", e.what());
  }
  return s;
}

Scenario load_scenario(const std::string& path, const DerSet& set) {
  return scenario_from_json(read_text_file(path), set, path);
}

std::string scenario_to_json(const Scenario& s, const DerSet& set) {
  nlohmann::ordered_json j;
  (void)set;
  j["duration_s"] = s.duration;
  if (s.dt > 0.0) j["dt_s"] = s.dt;
  else j["dt_s"] = "auto";
  j["ref_steps"] = nlohmann::ordered_json::array();
  for (const auto& [t, v] : s.ref_steps) j["ref_steps"].push_back({t, v});
  if (s.p_ref0) j["p_ref0_w"] = *s.p_ref0;
  j["avail_events"] = nlohmann::ordered_json::array();
  for (const auto& [t, m] : s.avail_events) j["avail_events"].push_back({t, m});
  j["fidelity"] = to_string(s.fidelity);
  j["t_com_s"] = s.t_com;
  j["t_meas_s"] = s.t_meas;
  if (!s.schedules.empty()) {
    nlohmann::ordered_json sch;
    for (const auto& [name, pts] : s.schedules) {
      sch[name] = nlohmann::ordered_json::array();
      for (const auto& [t, v] : pts) sch[name].push_back({t, v});
    }
    j["schedules"] = sch;
  }
  if (s.saturate) j["saturate"] = true;
  return j.dump(1) + "\n";
}

std::string trace_to_csv(const Trace& tr) {
  std::ostringstream out;
  out << "t,p_ref,p_meas,p_total,p_y,p_yi,mask,kp,ki";
  for (const auto& n : tr.der_names) {
    std::string col = n;
    std::replace(col.begin(), col.end(), ' ', '_');
    out << ",der_" << col;
  }
  out << '\n';
  for (std::size_t k = 0; k < tr.size(); ++k) {
    out << format_number(tr.t[k]) << ',' << format_number(tr.p_ref[k]) << ',' << format_number(tr.p_meas[k])
        << ',' << format_number(tr.p_total[k]) << ',' << format_number(tr.p_y[k]) << ',' << format_number(tr.p_yi[k])
        << ',' << tr.mask[k] << ',' << format_number(tr.kp[k]) << ',' << format_number(tr.ki[k]);
    for (const auto& col : tr.der) out << ',' << format_number(col[k]);
    out << '\n';
  }
  return out.str();
}

void save_trace_csv(const Trace& trace, const std::string& path) { write_text_file(path, trace_to_csv(trace)); }

StepMetrics segment_metrics(const Trace& trace, double t0, double t1, double before, double after) {
  if (after == before) throw ArgumentError("segment needs a nonzero step");
  const std::size_t k0 = trace.index(t0), k1 = trace.index(t1);
  if (k1 <= k0) throw ArgumentError("empty segment");
  StepTrace st;
  st.dt = trace.dt;
  st.reference = 1.0;
  for (std::size_t k = k0; k < k1; ++k) st.y.push_back((trace.p_total[k] - before) / (after - before));
  return step_metrics(st, 1.0);
}

}  // namespace cpfc
