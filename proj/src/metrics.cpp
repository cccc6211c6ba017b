#include "cpfc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpfc/errors.hpp"

namespace cpfc {

namespace {

constexpr double kPi = std::numbers::pi;

// Return ratio evaluated on merged branches (same value as loop_transfer).
class ReturnRatio {
 public:
  explicit ReturnRatio(const LoopModel& loop)
      : controller_(loop.controller),
        outer_delay_(loop.comm.delay() + loop.meas.delay()),
        outer_gain_(loop.comm.rational().dc_gain() * loop.meas.rational().dc_gain()),
        branches_(merge_branches(loop.branches)) {}

  Complex operator()(double omega) const {
    Complex sum = 0.0;
    for (const auto& br : branches_) sum += freq_response(br, omega);
    Complex l = freq_response(controller_, omega) * sum * outer_gain_;
    if (outer_delay_ != 0.0) l *= std::polar(1.0, -omega * outer_delay_);
    return l;
  }

  const std::vector<DelayTf>& branches() const { return branches_; }
  const DelayTf& controller() const { return controller_; }

 private:
  DelayTf controller_;
  double outer_delay_;
  double outer_gain_;
  std::vector<DelayTf> branches_;
};

// Unwrapped change of arg f(w) from wa to wb, subdividing in log-frequency
// until each piece turns by less than pi/4.
template <typename F>
double tracked_phase_change(const F& f, double wa, Complex fa, double wb, Complex fb, int depth) {
  const double d = std::arg(fb / fa);
  if (std::abs(d) < kPi / 4 || depth >= 40) return d;
  const double wm = std::sqrt(wa * wb);
  const Complex fm = f(wm);
  return tracked_phase_change(f, wa, fa, wm, fm, depth + 1) +
         tracked_phase_change(f, wm, fm, wb, fb, depth + 1);
}

// Phase change of 1 + L between two frequencies. While |L| < 0.5 at both
// ends 1 + L stays in the right half-plane, so the wrapped difference is
// exact and fast delay rotation needs no subdivision.
double return_difference_phase(const ReturnRatio& rr, double wa, Complex la, double wb, Complex lb, int depth) {
  const double d = std::arg((1.0 + lb) / (1.0 + la));
  if (std::max(std::abs(la), std::abs(lb)) < 0.5) return d;
  if (std::abs(d) < kPi / 4 || depth >= 40) return d;
  const double wm = std::sqrt(wa * wb);
  const Complex lm = rr(wm);
  return return_difference_phase(rr, wa, la, wm, lm, depth + 1) +
         return_difference_phase(rr, wm, lm, wb, lb, depth + 1);
}

std::size_t origin_poles_of_loop(const ReturnRatio& rr) {
  std::size_t branch_max = 0;
  for (const auto& br : rr.branches())
    branch_max = std::max(branch_max, br.rational().origin_poles());
  return rr.controller().rational().origin_poles() + branch_max;
}

std::size_t open_loop_rhp_poles(const ReturnRatio& rr) {
  std::size_t count = rhp_roots(rr.controller().rational().den());
  for (const auto& br : rr.branches()) count += rhp_roots(br.rational().den());
  return count;
}

double golden_max(const auto& f, double lo, double hi, int iterations) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations; ++i) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return std::max(fc, fd);
}

double sensitivity_offset(Complex l) {
  // |S - 1/2| with S = 1/(1 + L)
  const double den = 2.0 * std::abs(1.0 + l);
  if (den == 0.0) return kInfinity;
  return std::abs(1.0 - l) / den;
}

double interpolate_crossing(double t0, double v0, double t1, double v1, double level) {
  if (v1 == v0) return t1;
  return t0 + (level - v0) / (v1 - v0) * (t1 - t0);
}

}  // namespace

FrequencyGrid FrequencyGrid::log_space(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) throw ArgumentError("invalid frequency grid");
  FrequencyGrid grid;
  grid.omega.resize(points);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (std::size_t i = 0; i < points; ++i)
    grid.omega[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / static_cast<double>(points - 1));
  return grid;
}

const FrequencyGrid& FrequencyGrid::standard() {
  static const FrequencyGrid grid = log_space(1e-4, 1e4, 2000);
  return grid;
}

std::size_t rhp_roots(const std::vector<double>& poly_ascending) {
  std::size_t start = 0;
  while (start < poly_ascending.size() && poly_ascending[start] == 0.0) ++start;
  std::vector<double> p(poly_ascending.rbegin(),
                        poly_ascending.rend() - static_cast<std::ptrdiff_t>(start));
  while (!p.empty() && p.front() == 0.0) p.erase(p.begin());
  if (p.size() <= 1) return 0;
  const std::size_t n = p.size() - 1;
  const std::size_t width = n / 2 + 1;
  std::vector<std::vector<double>> rows(n + 1, std::vector<double>(width + 1, 0.0));
  double scale = 0.0;
  for (double v : p) scale = std::max(scale, std::abs(v));
  const double eps = 1e-12 * scale;
  for (std::size_t j = 0; j < width; ++j) {
    if (2 * j < p.size()) rows[0][j] = p[2 * j];
    if (2 * j + 1 < p.size()) rows[1][j] = p[2 * j + 1];
  }
  for (std::size_t i = 1; i <= n; ++i) {
    auto& prev = rows[i - 1];
    if (i >= 2) {
      auto& pp = rows[i - 2];
      for (std::size_t j = 0; j < width; ++j)
        rows[i][j] = (prev[0] * pp[j + 1] - pp[0] * prev[j + 1]) / prev[0];
    }
    auto& cur = rows[i];
    const bool all_zero = std::all_of(cur.begin(), cur.end(), [&](double v) { return std::abs(v) <= eps; });
    if (all_zero && i < n) {
      // Auxiliary polynomial from the previous row; replace by its derivative.
      const std::size_t order = n - (i - 1);
      for (std::size_t j = 0; j < width; ++j) {
        const double pw = static_cast<double>(order) - 2.0 * static_cast<double>(j);
        cur[j] = pw > 0 ? prev[j] * pw : 0.0;
      }
    }
    if (std::abs(cur[0]) <= eps) cur[0] = eps;
  }
  std::size_t changes = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if ((rows[i][0] > 0) != (rows[i - 1][0] > 0)) ++changes;
  return changes;
}

bool nyquist_stable(const LoopModel& loop) {
  const ReturnRatio rr(loop);
  const std::size_t n0 = origin_poles_of_loop(rr);
  const std::size_t p_rhp = open_loop_rhp_poles(rr);

  double lo = 1e-6;
  if (n0 > 0)
    while (std::abs(rr(lo)) < 1e4 && lo > 1e-14) lo /= 10.0;
  double hi = 1e4;
  while (std::abs(rr(hi)) > 1e-3 && hi < 1e10) hi *= 10.0;

  constexpr double kPerDecade = 200.0;
  const auto points = static_cast<std::size_t>(std::ceil(std::log10(hi / lo) * kPerDecade)) + 1;
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  double total = 0.0;
  double wa = lo;
  Complex la = rr(wa);
  for (std::size_t i = 1; i < points; ++i) {
    const double wb = lo * std::exp(step * static_cast<double>(i));
    const Complex lb = rr(wb);
    if (std::abs(1.0 + lb) < 1e-12) return false;
    total += return_difference_phase(rr, wa, la, wb, lb, 0);
    wa = wb;
    la = lb;
  }
  const double winding = (2.0 * total - static_cast<double>(n0) * kPi) / (2.0 * kPi);
  const auto w = std::lround(winding);
  return w == static_cast<long>(p_rhp);
}

double grid_disk_margin(const std::vector<Complex>& loop_samples) {
  if (loop_samples.empty()) throw ArgumentError("empty frequency grid");
  double sup = 0.0;
  for (const auto& l : loop_samples) sup = std::max(sup, sensitivity_offset(l));
  if (sup < 1e-12) return kInfinity;
  return 1.0 / sup;
}

double disk_margin(const LoopModel& loop, const FrequencyGrid& grid) {
  if (grid.omega.empty()) throw ArgumentError("empty frequency grid");
  if (!nyquist_stable(loop)) return 0.0;
  const ReturnRatio rr(loop);
  double sup = -1.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < grid.omega.size(); ++i) {
    const double v = sensitivity_offset(rr(grid.omega[i]));
    if (v > sup) {
      sup = v;
      arg = i;
    }
  }
  if (!std::isfinite(sup)) return 0.0;
  if (grid.omega.size() >= 2) {
    const double a = std::log(grid.omega[arg == 0 ? 0 : arg - 1]);
    const double b = std::log(grid.omega[std::min(arg + 1, grid.omega.size() - 1)]);
    if (b > a) {
      const auto g = [&](double lw) { return sensitivity_offset(rr(std::exp(lw))); };
      sup = std::max(sup, golden_max(g, a, b, 60));
    }
  }
  if (sup < 1e-12) return kInfinity;
  return 1.0 / sup;
}

MarginReport classical_margins(const LoopModel& loop, const FrequencyGrid& grid) {
  if (grid.omega.empty()) throw ArgumentError("empty frequency grid");
  MarginReport report;
  report.disk_margin = disk_margin(loop, grid);
  const ReturnRatio rr(loop);
  const auto& w = grid.omega;

  // Unwrapped phase relative to the first grid point, tracked while |L| is
  // large enough for crossings to matter.
  auto phase_between = [&](double wa, Complex la, double wb, Complex lb) {
    if (std::abs(la) < 1e-3 && std::abs(lb) < 1e-3) return std::arg(lb / la);
    return tracked_phase_change(rr, wa, la, wb, lb, 0);
  };

  double min_pm = kInfinity;
  double min_dm = kInfinity;
  double min_gm = kInfinity;
  bool any_gain_crossing = false;

  Complex la = rr(w[0]);
  double phase_a = std::arg(la);
  for (std::size_t i = 1; i < w.size(); ++i) {
    const Complex lb = rr(w[i]);
    const double phase_b = phase_a + phase_between(w[i - 1], la, w[i], lb);
    const double ma = std::abs(la), mb = std::abs(lb);

    if ((ma - 1.0) * (mb - 1.0) <= 0.0 && ma != mb) {
      double lo = std::log(w[i - 1]), hi = std::log(w[i]);
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double mm = std::abs(rr(std::exp(mid)));
        if ((mm - 1.0) * (ma - 1.0) > 0.0) lo = mid; else hi = mid;
      }
      const double wc = std::exp(0.5 * (lo + hi));
      const Complex lc = rr(wc);
      const double phase_c = phase_a + phase_between(w[i - 1], la, wc, lc);
      const double pm = kPi + phase_c;
      any_gain_crossing = true;
      min_pm = std::min(min_pm, pm);
      min_dm = std::min(min_dm, pm > 0 ? pm / wc : 0.0);
    }

    // Crossings of -180 deg (mod 360) by the unwrapped phase.
    const double ga = std::floor((phase_a + kPi) / (2 * kPi));
    const double gb = std::floor((phase_b + kPi) / (2 * kPi));
    if (ga != gb && (ma >= 1e-3 || mb >= 1e-3)) {
      const double level = -kPi + 2 * kPi * std::max(ga, gb);
      double lo = std::log(w[i - 1]), hi = std::log(w[i]);
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double wm = std::exp(mid);
        const double pmid = phase_a + phase_between(w[i - 1], la, wm, rr(wm));
        if ((pmid - level) * (phase_a - level) > 0.0) lo = mid; else hi = mid;
      }
      const double mag = std::abs(rr(std::exp(0.5 * (lo + hi))));
      if (mag > 0.0) min_gm = std::min(min_gm, 1.0 / mag);
    }
    la = lb;
    phase_a = phase_b;
  }
  if (any_gain_crossing) {
    report.phase_margin = std::max(0.0, min_pm * 180.0 / kPi);
    report.delay_margin = std::max(0.0, min_dm);
  }
  report.gain_margin = min_gm;
  return report;
}

bool stability_verdict(const StepTrace& trace, double reference) {
  if (trace.diverged) return false;
  const double r = std::abs(reference);
  for (double v : trace.y) {
    if (!std::isfinite(v) || std::abs(v) > 10.0 * r) return false;
  }
  const std::size_t n = trace.y.size();
  if (n < 3) return true;
  double dev_mid = 0.0, dev_last = 0.0;
  for (std::size_t k = n / 3; k < 2 * n / 3; ++k) dev_mid = std::max(dev_mid, std::abs(trace.y[k] - reference));
  for (std::size_t k = 2 * n / 3; k < n; ++k) dev_last = std::max(dev_last, std::abs(trace.y[k] - reference));
  if (dev_last <= kSettleBand * r) return true;
  // Growth or sustained oscillation: no clear decay between the windows.
  return dev_last < 0.9 * dev_mid;
}

StepMetrics step_metrics(const StepTrace& trace, double reference) {
  if (trace.y.empty()) throw ArgumentError("empty trace");
  StepMetrics m;
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  m.stable = stability_verdict(trace, reference);
  const auto& y = trace.y;
  const std::size_t n = y.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 20);
  double final_value = 0.0;
  for (std::size_t k = n - tail; k < n; ++k) final_value += y[k];
  final_value /= static_cast<double>(tail);
  if (!m.stable || !std::isfinite(final_value) ||
      std::abs(final_value) <= 1e-12 * std::max(1.0, std::abs(reference))) {
    m.stable = false;
    m.overshoot = m.rise_time = m.settling_time = m.final_value = nan;
    return m;
  }
  m.final_value = final_value;
  const double dt = trace.dt;
  double peak = -kInfinity;
  double t10 = nan, t90 = nan;
  std::size_t last_out = n;  // index of the last sample outside the band
  for (std::size_t k = 0; k < n; ++k) {
    const double z = y[k] / final_value;
    peak = std::max(peak, z);
    if (std::isnan(t10) && z >= 0.1)
      t10 = k == 0 ? 0.0 : interpolate_crossing(trace.time(k - 1), y[k - 1] / final_value, trace.time(k), z, 0.1);
    if (std::isnan(t90) && z >= 0.9)
      t90 = k == 0 ? 0.0 : interpolate_crossing(trace.time(k - 1), y[k - 1] / final_value, trace.time(k), z, 0.9);
    if (std::abs(z - 1.0) > 0.05) last_out = k;
  }
  m.overshoot = std::max(0.0, (peak - 1.0) * 100.0);
  m.rise_time = (std::isnan(t10) || std::isnan(t90)) ? nan : t90 - t10;
  if (last_out == n) {
    m.settling_time = 0.0;
  } else if (last_out + 1 >= n) {
    m.settling_time = trace.duration();
  } else {
    const double za = y[last_out] / final_value, zb = y[last_out + 1] / final_value;
    const double edge = za > 1.0 ? 1.05 : 0.95;
    m.settling_time = interpolate_crossing(trace.time(last_out), za, trace.time(last_out + 1), zb, edge);
  }
  (void)dt;
  return m;
}

Feasibility evaluate_feasibility(const LoopModel& loop, const Thresholds& thresholds) {
  Feasibility out;
  SimOptions opt;
  opt.abort_magnitude = 10.0;
  const StepTrace trace = simulate_closed_loop_step(loop, 1.0, opt);
  out.step = step_metrics(trace, 1.0);
  out.stable = out.step.stable;
  out.disk_margin = disk_margin(loop);
  out.feasible = out.stable && out.disk_margin >= thresholds.disk &&
                 out.step.overshoot < 100.0 * thresholds.overshoot;
  return out;
}

bool feasible(const LoopModel& loop, const Thresholds& thresholds) {
  return evaluate_feasibility(loop, thresholds).feasible;
}

}  // namespace cpfc
