#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cpfc/metrics.hpp"
#include "cpfc/plant.hpp"
#include "cpfc/tuner.hpp"

namespace cpfc {

struct SweepRow {
  Mask mask = 0;
  double disk_margin = 0.0;
  double gain_margin = 0.0;
  double phase_margin = 0.0;  // deg
  double delay_margin = 0.0;  // s
  double overshoot = 0.0;     // percent
  double rise_time = 0.0;     // s
  double settling_time = 0.0; // s
  bool stable = false;
};

/// Margins and step metrics of every mask's reference loop under the
/// adaptive table (with its W factors).
std::vector<SweepRow> robustness_sweep(const DerSet& set, const CpTable& table, std::size_t threads = 0);
/// Same with one static pair for every mask (W all ones).
std::vector<SweepRow> robustness_sweep(const DerSet& set, double kp, double ki, double t_com = kDefaultTcom,
                                       double t_meas = kDefaultTmeas, std::size_t threads = 0);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);
double median(std::vector<double> values);

struct UncertaintyPoint {
  double b = 1.0;
  bool stable = true;
  double worst_rise_ratio = std::numeric_limits<double>::quiet_NaN();
  double worst_settling_ratio = std::numeric_limits<double>::quiet_NaN();
};

/// Threshold values of b. Downward searches without a finding report 0,
/// upward ones +inf.
struct UncertaintyResult {
  ModelType model = ModelType::PT1;
  double b_min_unstable = 0.0;
  double b_max_unstable = std::numeric_limits<double>::infinity();
  double b_min_2x_rise = 0.0;
  double b_max_2x_rise = std::numeric_limits<double>::infinity();
  double b_min_2x_settling = 0.0;
  double b_max_2x_settling = std::numeric_limits<double>::infinity();
  std::vector<UncertaintyPoint> points;  // ascending b
};

struct UncertaintyOptions {
  double factor = 1.05;
  double b_upper = 1000.0;
  double b_lower = 1e-4;
  double tolerance = 0.01;  // relative bracket width after refinement
  bool time_domain = true;  // doubled rise / settling search
  std::size_t threads = 0;
};

/// Vary the DER time constants by b (model type as given) under the tuned
/// gains and locate the first instability and the first doubling of any
/// mask's rise or settling time in both directions. Stability uses the
/// Nyquist criterion; rise and settling come from step simulations.
UncertaintyResult uncertainty_sweep(const DerSet& set, const CpTable& table, ModelType model,
                                    const UncertaintyOptions& options = {});

std::string uncertainty_to_csv(const UncertaintyResult& r);

}  // namespace cpfc
