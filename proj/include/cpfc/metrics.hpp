#pragma once

#include <limits>
#include <vector>

#include "cpfc/lti.hpp"

namespace cpfc {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Log-spaced frequency grid in rad/s.
struct FrequencyGrid {
  std::vector<double> omega;

  static FrequencyGrid log_space(double lo, double hi, std::size_t points);
  /// 2000 points over [1e-4, 1e4] rad/s.
  static const FrequencyGrid& standard();
};

struct StepMetrics {
  double overshoot = 0.0;      // percent of final value
  double rise_time = 0.0;      // s, 10 % -> 90 %
  double settling_time = 0.0;  // s, last exit from the 5 % band
  double final_value = 0.0;
  bool stable = false;
};

struct MarginReport {
  double disk_margin = 0.0;
  double gain_margin = kInfinity;   // absolute
  double phase_margin = kInfinity;  // degrees
  double delay_margin = kInfinity;  // seconds
};

struct Thresholds {
  double disk = 1.5;
  double overshoot = 0.01;  // fraction; compared against overshoot percent / 100
};

/// Closed-loop stability from the Nyquist criterion on the exact
/// (delay-including) return ratio. Open-loop right-half-plane poles are
/// counted with a Routh array.
bool nyquist_stable(const LoopModel& loop);

/// Balanced disk margin 1 / sup |S - 1/2|; 0 for an unstable nominal loop,
/// +inf when S == 1/2 identically.
double disk_margin(const LoopModel& loop, const FrequencyGrid& grid = FrequencyGrid::standard());

/// Disk margin over precomputed return-ratio samples, without stability
/// check or refinement. Upper bound of disk_margin().
double grid_disk_margin(const std::vector<Complex>& loop_samples);

MarginReport classical_margins(const LoopModel& loop,
                               const FrequencyGrid& grid = FrequencyGrid::standard());

StepMetrics step_metrics(const StepTrace& trace, double reference);
bool stability_verdict(const StepTrace& trace, double reference);

struct Feasibility {
  bool feasible = false;
  bool stable = false;
  double disk_margin = 0.0;
  StepMetrics step;
};

/// Full feasibility evaluation: time-domain stability, disk margin and
/// overshoot on a unit reference step.
Feasibility evaluate_feasibility(const LoopModel& loop, const Thresholds& thresholds = {});
bool feasible(const LoopModel& loop, const Thresholds& thresholds = {});

/// Count of roots with positive real part (Routh array).
std::size_t rhp_roots(const std::vector<double>& poly_ascending);

}  // namespace cpfc
