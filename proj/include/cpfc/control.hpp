#pragma once

#include <optional>
#include <vector>

#include "cpfc/plant.hpp"
#include "cpfc/tuner.hpp"

namespace cpfc {

struct PiState {
  double x_i = 0.0;  // integrator state
  double kp_active = 0.0;
  double ki_active = 0.0;
  double ki_prev = 0.0;

  double integral_output() const { return ki_active * x_i; }
};

using Availability = std::vector<bool>;

Mask availability_mask(const Availability& avail);
Availability availability_from_mask(Mask mask, std::size_t der_count);

/// Entry for the mask, or nullopt for the empty mask (hold). Throws
/// ConfigError when the table lacks the mask.
std::optional<CpEntry> select_params(const CpTable& table, Mask mask);
std::optional<CpEntry> select_params(const CpTable& table, const Availability& avail);

/// Integrator state after a change of ki such that ki_new * x_0 equals
/// ki_old * x_i.
double integrator_reset(double x_i, double ki_old, double ki_new);

/// Forward Euler: x_i += p_err*dt, then p_y = kp*p_err + ki*x_i.
double pi_step(double p_err, PiState& state, double dt);

/// Setpoint per DER (index order): p_y*w_d*c_d + schedule for available
/// DERs, schedule only for the others. w holds one factor per DER in index
/// order (empty = all 1). With saturate the result is clamped to
/// [-p_inst, p_inst].
std::vector<double> dispatch_setpoints(double p_y, const DerSet& set, Mask avail, double t,
                                       const std::vector<double>& w = {}, bool saturate = false);

/// Runtime controller: gain schedule lookup, bumpless integrator reset and
/// hold on an empty availability set.
class GainScheduledController {
 public:
  explicit GainScheduledController(const CpTable& table);

  /// Apply a new availability mask. Returns true when ki changed (reset fired).
  bool set_availability(Mask mask);
  double step(double p_err, double dt);

  const PiState& state() const { return state_; }
  Mask mask() const { return mask_; }
  bool holding() const { return mask_ == 0; }
  double output() const { return p_y_; }
  /// Scaling factor per DER in index order (1 for inactive DERs).
  const std::vector<double>& w() const { return w_; }

 private:
  const CpTable* table_;
  PiState state_;
  Mask mask_ = 0;
  bool configured_ = false;
  double p_y_ = 0.0;
  std::vector<double> w_;
};

}  // namespace cpfc
