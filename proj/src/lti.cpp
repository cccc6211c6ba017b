#include "cpfc/lti.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpfc/errors.hpp"

namespace cpfc {

namespace {

void check_finite(const std::vector<double>& coeffs, const char* what) {
  for (double c : coeffs) {
    if (!std::isfinite(c)) {
      throw ArgumentError(std::string(what) + " coefficient is not finite");
    }
  }
}

std::vector<double> trim_leading_zeros(std::vector<double> poly) {
  while (poly.size() > 1 && poly.back() == 0.0) poly.pop_back();
  return poly;
}

Complex horner(const std::vector<double>& coeffs, Complex s) {
  Complex acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * s + *it;
  return acc;
}

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

// Values of dt that divide the common delays (0.01 s, 0.1 s, 1 s) exactly.
constexpr double kNiceSteps[] = {1e-4,   2e-4, 2.5e-4, 5e-4, 1e-3, 2e-3,
                                 2.5e-3, 5e-3, 1e-2,   2e-2, 2.5e-2, 5e-2};
constexpr double kMinDt = 1e-4;
constexpr double kMaxDt = 0.05;

// Loop delay seen by each branch: comm delay plus its own delay.
double smallest_path_delay(const LoopModel& loop) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& br : loop.branches) {
    const double d = loop.comm.delay() + br.delay();
    if (d > 0.0) best = std::min(best, d);
  }
  if (loop.comm.delay() > 0.0) best = std::min(best, loop.comm.delay());
  if (loop.meas.delay() > 0.0) best = std::min(best, loop.meas.delay());
  return best;
}

// Smallest nonzero time constant of a rational block, from its poles'
// magnitudes for orders up to two and from coefficient ratios beyond that.
double smallest_time_constant(const RationalTf& tf) {
  const auto& d = tf.den();
  double best = std::numeric_limits<double>::infinity();
  std::size_t lead = tf.origin_poles();
  std::vector<double> red(d.begin() + static_cast<std::ptrdiff_t>(lead), d.end());
  if (red.size() == 2) {
    best = std::abs(red[1] / red[0]);
  } else if (red.size() == 3) {
    // Roots of red[0] + red[1] s + red[2] s^2: time constants 1/|root|.
    const double a = red[2], b = red[1], c = red[0];
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
      const double r1 = q / a;
      const double r2 = c / q;
      for (double r : {r1, r2})
        if (r != 0.0) best = std::min(best, 1.0 / std::abs(r));
    } else {
      best = std::sqrt(std::abs(a / c));
    }
  } else if (red.size() > 3) {
    for (std::size_t i = 1; i < red.size(); ++i)
      if (red[i] != 0.0) best = std::min(best, std::abs(red[i - 1] / red[i]));
  }
  // Numerator zeros also shape the fast response.
  const auto& n = tf.num();
  for (std::size_t i = 1; i < n.size(); ++i)
    if (n[i] != 0.0 && n[i - 1] != 0.0) best = std::min(best, std::abs(n[i] / n[i - 1]));
  return best == 0.0 ? std::numeric_limits<double>::infinity() : best;
}

// Affine map of the forward path for the current step: y = slope * e + offset.
struct ForwardPath {
  DiscreteTf controller;
  SampleDelay comm;
  std::vector<SampleDelay> branch_delays;
  std::vector<DiscreteTf> branch_tfs;

  double peek(double e) const {
    const double uc = controller.peek(e);
    const double uk = comm.samples() > 0 ? comm.front() : uc;
    double y = 0.0;
    for (std::size_t i = 0; i < branch_tfs.size(); ++i) {
      const double ub = branch_delays[i].samples() > 0 ? branch_delays[i].front() : uk;
      y += branch_tfs[i].peek(ub);
    }
    return y;
  }

  double step(double e) {
    const double uc = controller.step(e);
    const double uk = comm.step(uc);
    double y = 0.0;
    for (std::size_t i = 0; i < branch_tfs.size(); ++i)
      y += branch_tfs[i].step(branch_delays[i].step(uk));
    return y;
  }
};

ForwardPath make_forward_path(const LoopModel& loop, double dt) {
  const auto merged = merge_branches(loop.branches);
  ForwardPath fp{DiscreteTf(loop.controller.rational(), dt),
                 SampleDelay(delay_samples(loop.controller.delay() + loop.comm.delay(), dt)),
                 {},
                 {}};
  if (loop.comm.rational().order() > 0 || loop.comm.rational().num().size() > 1)
    throw ArgumentError("communication block must be a static gain with delay");
  const double comm_gain = loop.comm.rational().dc_gain();
  for (const auto& br : merged) {
    fp.branch_delays.emplace_back(delay_samples(br.delay(), dt));
    std::vector<double> num = br.rational().num();
    for (double& c : num) c *= comm_gain;
    fp.branch_tfs.emplace_back(RationalTf(num, br.rational().den()), dt);
  }
  return fp;
}

void validate_sim_args(double dt, double horizon) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ArgumentError("dt must be positive");
  if (!(horizon >= 10.0 * dt) || !std::isfinite(horizon))
    throw ArgumentError("horizon must be at least 10 * dt");
}

}  // namespace

// ---------------------------------------------------------------------------

RationalTf::RationalTf(std::vector<double> num, std::vector<double> den)
    : num_(trim_leading_zeros(std::move(num))), den_(trim_leading_zeros(std::move(den))) {
  if (num_.empty()) num_ = {0.0};
  if (den_.empty()) throw ArgumentError("empty denominator");
  check_finite(num_, "numerator");
  check_finite(den_, "denominator");
  if (den_.back() == 0.0) throw ArgumentError("denominator is identically zero");
  if (num_.size() > den_.size()) throw ArgumentError("improper transfer function");
}

RationalTf RationalTf::gain(double k) { return RationalTf({k}, {1.0}); }

RationalTf RationalTf::pi(double kp, double ki) {
  if (ki == 0.0) return gain(kp);
  return RationalTf({ki, kp}, {0.0, 1.0});
}

RationalTf RationalTf::first_order(double k, double t) { return RationalTf({k}, {1.0, t}); }

Complex RationalTf::eval(Complex s) const {
  const Complex d = horner(den_, s);
  if (d == 0.0) throw SingularFrequencyError("denominator vanishes at evaluated point");
  return horner(num_, s) / d;
}

double RationalTf::dc_gain() const {
  if (den_[0] == 0.0) throw SingularFrequencyError("infinite DC gain");
  return num_[0] / den_[0];
}

std::size_t RationalTf::origin_poles() const {
  std::size_t n = 0;
  while (n < den_.size() && den_[n] == 0.0) ++n;
  return n;
}

DelayTf::DelayTf(RationalTf rational, double delay) : rational_(std::move(rational)), delay_(delay) {
  if (!(delay >= 0.0) || !std::isfinite(delay)) throw ArgumentError("delay must be >= 0");
}

DelayTf DelayTf::pure_delay(double delay) { return DelayTf(RationalTf::gain(1.0), delay); }

LoopModel::LoopModel(DelayTf controller_, DelayTf comm_, std::vector<DelayTf> branches_,
                     DelayTf meas_)
    : controller(std::move(controller_)),
      comm(std::move(comm_)),
      branches(std::move(branches_)),
      meas(std::move(meas_)) {
  if (branches.empty()) throw ArgumentError("loop needs at least one plant branch");
}

Complex freq_response(const DelayTf& tf, double omega) {
  if (!(omega >= 0.0)) throw ArgumentError("omega must be >= 0");
  const Complex s(0.0, omega);
  const Complex rat = tf.rational().eval(s);
  if (tf.delay() == 0.0) return rat;
  return rat * std::polar(1.0, -omega * tf.delay());
}

Complex plant_response(const LoopModel& loop, double omega) {
  Complex sum = 0.0;
  for (const auto& br : loop.branches) sum += freq_response(br, omega);
  return sum;
}

Complex open_loop_response(const LoopModel& loop, double omega) {
  return freq_response(loop.controller, omega) * freq_response(loop.comm, omega) *
         plant_response(loop, omega);
}

Complex loop_transfer(const LoopModel& loop, double omega) {
  return open_loop_response(loop, omega) * freq_response(loop.meas, omega);
}

std::vector<DelayTf> merge_branches(const std::vector<DelayTf>& branches) {
  std::vector<DelayTf> out;
  for (const auto& br : branches) {
    auto it = std::find_if(out.begin(), out.end(), [&](const DelayTf& m) {
      return m.delay() == br.delay() && m.rational().den() == br.rational().den();
    });
    if (it == out.end()) {
      out.push_back(br);
      continue;
    }
    std::vector<double> num = it->rational().num();
    const auto& add = br.rational().num();
    if (add.size() > num.size()) num.resize(add.size(), 0.0);
    for (std::size_t i = 0; i < add.size(); ++i) num[i] += add[i];
    *it = DelayTf(RationalTf(num, it->rational().den()), it->delay());
  }
  return out;
}

double branch_time_scale(const std::vector<DelayTf>& branches) {
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& br : branches) {
    const auto& n = br.rational().num();
    const auto& d = br.rational().den();
    if (d[0] == 0.0 || n[0] == 0.0) continue;
    // First moment of the impulse response: d1/d0 - n1/n0.
    double tau = (d.size() > 1 ? d[1] / d[0] : 0.0) - (n.size() > 1 ? n[1] / n[0] : 0.0);
    tau = std::abs(tau);
    const double k = std::abs(n[0] / d[0]);
    weighted += (br.delay() + 2.197 * tau) * k;
    total += k;
  }
  return total > 0.0 ? weighted / total : 0.0;
}

double integral_time_constant(const LoopModel& loop) {
  const auto& c = loop.controller.rational();
  if (c.origin_poles() != 1 || c.den().size() != 2) return 0.0;
  double k0 = 0.0;
  for (const auto& br : loop.branches) {
    if (br.rational().den()[0] == 0.0) return 0.0;
    k0 += br.rational().dc_gain();
  }
  k0 *= loop.comm.rational().dc_gain() * loop.meas.rational().dc_gain();
  const double ki = c.num()[0] / c.den()[1];
  const double kp = c.num().size() > 1 ? c.num()[1] / c.den()[1] : 0.0;
  if (ki * k0 <= 0.0) return 0.0;
  return std::abs((1.0 + kp * k0) / (ki * k0));
}

double auto_dt(const LoopModel& loop) {
  double fastest = smallest_path_delay(loop);
  for (const auto& br : loop.branches)
    fastest = std::min(fastest, smallest_time_constant(br.rational()));
  double raw = fastest / 10.0;
  if (!std::isfinite(raw)) raw = kMaxDt;
  raw = std::clamp(raw, kMinDt, kMaxDt);
  double dt = kNiceSteps[0];
  for (double s : kNiceSteps)
    if (s <= raw * (1.0 + 1e-12)) dt = s;
  return dt;
}

double auto_horizon(const LoopModel& loop) {
  const double base = branch_time_scale(loop.branches) + loop.comm.delay() + loop.meas.delay();
  return std::max(100.0 * base, 20.0 * integral_time_constant(loop));
}

double settle_window(const LoopModel& loop) {
  const double base = branch_time_scale(loop.branches) + loop.comm.delay() + loop.meas.delay();
  return 10.0 * base + integral_time_constant(loop);
}

double StepTrace::duration() const {
  return y.empty() ? 0.0 : static_cast<double>(y.size() - 1) * dt;
}

StepTrace simulate_closed_loop_step(const LoopModel& loop, double amplitude,
                                    const SimOptions& options) {
  const double dt = options.dt > 0.0 ? options.dt : auto_dt(loop);
  const bool auto_h = !(options.horizon > 0.0);
  const double horizon = auto_h ? auto_horizon(loop) : options.horizon;
  validate_sim_args(dt, horizon);

  ForwardPath fp = make_forward_path(loop, dt);
  if (loop.meas.rational().order() > 0 || loop.meas.rational().num().size() > 1)
    throw ArgumentError("measurement block must be a static gain with delay");
  const double meas_gain = loop.meas.rational().dc_gain();
  SampleDelay meas(delay_samples(loop.meas.delay(), dt));

  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  const std::size_t window = auto_h ? static_cast<std::size_t>(std::ceil(settle_window(loop) / dt)) : 0;
  const double band = kSettleBand * std::abs(amplitude);

  StepTrace trace;
  trace.dt = dt;
  trace.reference = amplitude;
  trace.y.reserve(std::min<std::size_t>(steps + 1, 1 << 14));
  std::size_t in_band = 0;
  const bool use_cutoff = std::isfinite(options.rise_cutoff);
  const double lo10 = 0.1 * amplitude, hi90 = 0.9 * amplitude;
  double t10 = -1.0;
  bool reached90 = false;
  for (std::size_t k = 0; k <= steps; ++k) {
    double y = 0.0;
    if (meas.samples() > 0) {
      y = fp.step(amplitude - meas_gain * meas.front());
    } else {
      // Algebraic loop: solve y = a (r - g y) + c for this sample.
      const double c = fp.peek(0.0);
      const double a = fp.peek(1.0) - c;
      const double yk = (a * amplitude + c) / (1.0 + a * meas_gain);
      y = fp.step(amplitude - meas_gain * yk);
    }
    meas.step(y);
    if (!std::isfinite(y) || std::abs(y) > options.abort_magnitude) {
      trace.diverged = true;
      if (std::isfinite(y)) trace.y.push_back(y);
      break;
    }
    trace.y.push_back(y);
    if (y > options.abort_above) {
      trace.aborted = true;
      break;
    }
    if (use_cutoff) {
      const double t = static_cast<double>(k) * dt;
      if (t10 < 0.0 && y >= lo10) t10 = t;
      if (y >= hi90) reached90 = true;
      if (t10 >= 0.0 && !reached90 && t - t10 > options.rise_cutoff) {
        trace.cut = true;
        break;
      }
    }
    if (auto_h) {
      in_band = std::abs(y - amplitude) <= band ? in_band + 1 : 0;
      if (in_band > window) {
        trace.settled = true;
        break;
      }
    }
  }
  return trace;
}

StepTrace simulate_closed_loop_step(const LoopModel& loop, double amplitude, double dt,
                                    double horizon) {
  SimOptions opt;
  opt.dt = dt;
  opt.horizon = horizon;
  return simulate_closed_loop_step(loop, amplitude, opt);
}

StepTrace simulate_open_loop_step(const LoopModel& loop, double amplitude, double dt,
                                  double horizon) {
  if (dt <= 0.0) dt = auto_dt(loop);
  if (horizon <= 0.0) horizon = auto_horizon(loop);
  validate_sim_args(dt, horizon);
  ForwardPath fp = make_forward_path(loop, dt);
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  StepTrace trace;
  trace.dt = dt;
  trace.reference = amplitude;
  trace.y.reserve(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double y = fp.step(amplitude);
    if (!std::isfinite(y)) {
      trace.diverged = true;
      break;
    }
    trace.y.push_back(y);
  }
  return trace;
}

// ---------------------------------------------------------------------------

DiscreteTf::DiscreteTf(const RationalTf& tf, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  const std::size_t n = tf.order();
  const double c = 2.0 / dt;
  std::vector<double> num(n + 1, 0.0), den(n + 1, 0.0);
  // Substitute s = c (1 - q)/(1 + q), q = z^-1, and multiply through by (1 + q)^n.
  for (std::size_t k = 0; k <= n; ++k) {
    std::vector<double> basis{1.0};
    for (std::size_t i = 0; i < k; ++i) basis = poly_mul(basis, {1.0, -1.0});
    for (std::size_t i = k; i < n; ++i) basis = poly_mul(basis, {1.0, 1.0});
    const double ck = std::pow(c, static_cast<double>(k));
    const double nk = k < tf.num().size() ? tf.num()[k] : 0.0;
    const double dk = tf.den()[k];
    for (std::size_t i = 0; i <= n; ++i) {
      num[i] += nk * ck * basis[i];
      den[i] += dk * ck * basis[i];
    }
  }
  if (den[0] == 0.0) throw ArgumentError("discretization is singular for this dt");
  const double a0 = den[0];
  for (auto& v : num) v /= a0;
  for (auto& v : den) v /= a0;
  b_ = std::move(num);
  a_ = std::move(den);
  state_.assign(n, 0.0);
}

double DiscreteTf::peek(double u) const {
  return state_.empty() ? b_[0] * u : b_[0] * u + state_[0];
}

double DiscreteTf::step(double u) {
  const double y = peek(u);
  const std::size_t n = state_.size();
  for (std::size_t i = 0; i + 1 < n; ++i) state_[i] = b_[i + 1] * u - a_[i + 1] * y + state_[i + 1];
  if (n > 0) state_[n - 1] = b_[n] * u - a_[n] * y;
  return y;
}

void DiscreteTf::reset_steady(double u) {
  double asum = 0.0, bsum = 0.0;
  for (double v : a_) asum += v;
  for (double v : b_) bsum += v;
  if (asum == 0.0) throw ArgumentError("block has no finite steady state");
  const double y = bsum / asum * u;
  const std::size_t n = state_.size();
  for (std::size_t i = n; i-- > 0;) {
    const double next = i + 1 < n ? state_[i + 1] : 0.0;
    state_[i] = b_[i + 1] * u - a_[i + 1] * y + next;
  }
}

void DiscreteTf::reset() { std::fill(state_.begin(), state_.end(), 0.0); }

SampleDelay::SampleDelay(std::size_t samples, double initial) : buffer_(samples, initial) {}

double SampleDelay::step(double u) {
  if (buffer_.empty()) return u;
  const double out = buffer_[head_];
  buffer_[head_] = u;
  head_ = head_ + 1 == buffer_.size() ? 0 : head_ + 1;
  return out;
}

void SampleDelay::fill(double value) { std::fill(buffer_.begin(), buffer_.end(), value); }

std::size_t delay_samples(double delay, double dt) {
  return static_cast<std::size_t>(std::llround(delay / dt));
}

}  // namespace cpfc
