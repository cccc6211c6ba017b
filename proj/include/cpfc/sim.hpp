#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpfc/control.hpp"
#include "cpfc/lti.hpp"
#include "cpfc/plant.hpp"
#include "cpfc/tuner.hpp"

namespace cpfc {

enum class Fidelity { Reference, Detailed };

std::string to_string(Fidelity f);
Fidelity parse_fidelity(const std::string& text);

/// Rise-time split of the detailed wind turbine (rising / falling, s). The
/// mean equals the fleet table value 0.515 s.
inline constexpr double kWtRiseUp = 0.40;
inline constexpr double kWtRiseDown = 0.63;

/// Unity-gain DER actuator acting on absolute setpoints (W).
class DerModel {
 public:
  DerModel(const DerSpec& spec, Fidelity fidelity, double dt);
  ~DerModel();
  DerModel(DerModel&&) noexcept;
  DerModel& operator=(DerModel&&) noexcept;

  double step(double setpoint);
  /// Rest state at the given setpoint (delay line filled).
  void reset_steady(double value);
  double output() const { return y_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  double y_ = 0.0;
};

/// One step of a DER model (detailed or reference).
double detailed_der_step(DerModel& model, double input);

struct Scenario {
  double duration = 0.0;  // s
  double dt = 0.0;        // <= 0: auto from the reachable DERs
  /// Reference changes (time s, delta W) added to p_ref0.
  std::vector<std::pair<double, double>> ref_steps;
  /// Initial reference; unset = sum of the schedules at t = 0.
  std::optional<double> p_ref0;
  /// (time s, availability mask). Without an entry at t = 0 all DERs start
  /// available.
  std::vector<std::pair<double, Mask>> avail_events;
  Fidelity fidelity = Fidelity::Reference;
  double t_com = kDefaultTcom;
  double t_meas = kDefaultTmeas;
  /// Schedule overrides by DER name.
  std::map<std::string, std::vector<std::pair<double, double>>> schedules;
  bool saturate = false;

  void validate() const;
};

/// Default demonstration: +1 MW at 20 s and 200 s, -1 MW at 120 s and
/// 420 s, all wind turbines lost for control at 170 s.
Scenario wt_loss_scenario(const DerSet& set);

struct Trace {
  double dt = 0.0;
  std::vector<std::string> der_names;
  std::vector<double> t, p_ref, p_meas, p_total, p_y, p_yi;
  std::vector<Mask> mask;
  std::vector<double> kp, ki;
  std::vector<std::vector<double>> der;  // der[d][k]

  std::size_t size() const { return t.size(); }
  /// Index of the sample at time t (rounded).
  std::size_t index(double time) const;
};

Trace run_scenario(const Scenario& scenario, const DerSet& set, const CpTable& table);

Scenario scenario_from_json(const std::string& text, const DerSet& set, const std::string& origin = "<scenario>");
Scenario load_scenario(const std::string& path, const DerSet& set);
std::string scenario_to_json(const Scenario& s, const DerSet& set);

std::string trace_to_csv(const Trace& trace);
void save_trace_csv(const Trace& trace, const std::string& path);

/// Step metrics of one reference step inside a trace: samples from t0 up to
/// t1 normalised as (p_total - before) / (after - before).
StepMetrics segment_metrics(const Trace& trace, double t0, double t1, double before, double after);

}  // namespace cpfc
