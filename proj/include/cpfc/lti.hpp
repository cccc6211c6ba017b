#pragma once

#include <complex>
#include <cstddef>
#include <limits>
#include <vector>

namespace cpfc {

using Complex = std::complex<double>;

/// Rational transfer function num(s)/den(s). Coefficients are stored in
/// ascending powers of s, so {1, 2} means 1 + 2s.
class RationalTf {
 public:
  RationalTf(std::vector<double> num, std::vector<double> den);

  static RationalTf gain(double k);
  /// kp + ki/s
  static RationalTf pi(double kp, double ki);
  /// k / (1 + t s)
  static RationalTf first_order(double k, double t);

  const std::vector<double>& num() const { return num_; }
  const std::vector<double>& den() const { return den_; }
  std::size_t order() const { return den_.size() - 1; }

  Complex eval(Complex s) const;
  /// Value at s = 0. Throws if the denominator vanishes there.
  double dc_gain() const;
  /// Number of poles at the origin (trailing zero constant terms of den).
  std::size_t origin_poles() const;

  bool operator==(const RationalTf&) const = default;

 private:
  std::vector<double> num_;
  std::vector<double> den_;
};

/// Rational part followed by a pure transport delay e^{-s*delay}.
class DelayTf {
 public:
  DelayTf(RationalTf rational, double delay = 0.0);

  static DelayTf pure_delay(double delay);
  static DelayTf gain(double k) { return DelayTf(RationalTf::gain(k)); }

  const RationalTf& rational() const { return rational_; }
  double delay() const { return delay_; }

 private:
  RationalTf rational_;
  double delay_;
};

/// Single-loop block diagram: reference -> controller -> comm -> sum of
/// plant branches -> output, with the output fed back through meas.
struct LoopModel {
  DelayTf controller;
  DelayTf comm;
  std::vector<DelayTf> branches;
  DelayTf meas;

  LoopModel(DelayTf controller, DelayTf comm, std::vector<DelayTf> branches,
            DelayTf meas);
};

/// Exact frequency response e^{-j w delay} num(jw)/den(jw).
Complex freq_response(const DelayTf& tf, double omega);
/// Sum of the branch responses.
Complex plant_response(const LoopModel& loop, double omega);
/// controller * comm * plant (forward path, no measurement).
Complex open_loop_response(const LoopModel& loop, double omega);
/// Return ratio used for margins: forward path times measurement.
Complex loop_transfer(const LoopModel& loop, double omega);

/// Branches with identical denominator and delay summed into one block.
/// Used by the simulator; the result is the same linear system.
std::vector<DelayTf> merge_branches(const std::vector<DelayTf>& branches);

/// Gain-weighted mean of (delay + 2.197 * equivalent time constant) over
/// the branches. For first-order branches this equals the rise-time
/// weighted average used by the convexity indicator.
double branch_time_scale(const std::vector<DelayTf>& branches);

/// Closed-loop integral time constant (1 + kp K0)/(ki K0) where K0 is the
/// plant DC gain; 0 when the controller has no integrator.
double integral_time_constant(const LoopModel& loop);

double auto_dt(const LoopModel& loop);
double auto_horizon(const LoopModel& loop);

struct SimOptions {
  double dt = 0.0;       // <= 0 selects auto_dt
  double horizon = 0.0;  // <= 0 selects auto_horizon and settle detection
  /// Stop early once |y| exceeds this bound (trace flagged as diverged).
  double abort_magnitude = std::numeric_limits<double>::infinity();
  /// Stop early once y exceeds this value (trace flagged as aborted).
  double abort_above = std::numeric_limits<double>::infinity();
  /// Stop once the 10-90 % rise (relative to the amplitude) is known to
  /// exceed this many seconds (trace flagged as cut).
  double rise_cutoff = std::numeric_limits<double>::infinity();
};

struct StepTrace {
  double dt = 0.0;
  double reference = 0.0;
  std::vector<double> y;
  bool diverged = false;  // non-finite state or magnitude abort
  bool aborted = false;   // abort_above triggered
  bool cut = false;       // rise_cutoff triggered
  bool settled = false;   // auto horizon ended on the settle rule

  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  double duration() const;
};

/// Fixed-step simulation of the closed loop for a reference step of the
/// given amplitude at t = 0. Rational blocks use the trapezoidal rule,
/// delays are sample-aligned ring buffers.
StepTrace simulate_closed_loop_step(const LoopModel& loop, double amplitude,
                                    const SimOptions& options = {});
StepTrace simulate_closed_loop_step(const LoopModel& loop, double amplitude,
                                    double dt, double horizon);

/// Forward path only (no feedback), same discretization.
StepTrace simulate_open_loop_step(const LoopModel& loop, double amplitude,
                                  double dt, double horizon);

/// Settle rule for auto-horizon runs: |y - r| <= kSettleBand * |r| held for
/// settle_window(loop) seconds.
inline constexpr double kSettleBand = 1e-3;
double settle_window(const LoopModel& loop);

// ---------------------------------------------------------------------------
// Discrete building blocks, shared with the scenario engine.

/// Trapezoidal (bilinear) discretization of a rational block, realized in
/// transposed direct form II.
class DiscreteTf {
 public:
  DiscreteTf(const RationalTf& tf, double dt);

  /// Output for input u without advancing the state.
  double peek(double u) const;
  double step(double u);
  /// Put the block at rest with constant input u (requires finite DC gain).
  void reset_steady(double u);
  void reset();

 private:
  std::vector<double> b_;
  std::vector<double> a_;  // a_[0] == 1
  std::vector<double> state_;
};

/// Delay of n samples: step(u) returns the input from n calls earlier.
class SampleDelay {
 public:
  explicit SampleDelay(std::size_t samples, double initial = 0.0);

  std::size_t samples() const { return buffer_.size(); }
  /// Value step() will return when samples() > 0.
  double front() const { return buffer_.empty() ? 0.0 : buffer_[head_]; }
  double step(double u);
  void fill(double value);

 private:
  std::vector<double> buffer_;
  std::size_t head_ = 0;
};

std::size_t delay_samples(double delay, double dt);

}  // namespace cpfc
