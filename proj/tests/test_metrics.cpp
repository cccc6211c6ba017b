#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cpfc/errors.hpp"
#include "cpfc/metrics.hpp"

using namespace cpfc;

namespace {

constexpr double kPi = std::numbers::pi;

LoopModel loop_of(RationalTf controller, std::vector<DelayTf> branches, double t_com = 0.0, double t_meas = 0.0) {
  return LoopModel(DelayTf(std::move(controller)), DelayTf::pure_delay(t_com), std::move(branches),
                   DelayTf::pure_delay(t_meas));
}

StepTrace analytic_trace(double dt, double horizon, double (*f)(double)) {
  StepTrace tr;
  tr.dt = dt;
  tr.reference = 1.0;
  for (std::size_t k = 0; k * dt <= horizon; ++k) tr.y.push_back(f(k * dt));
  return tr;
}

// Critical proportional gain of K e^{-s theta} / (1 + s T): the phase
// reaches -180 deg where atan(w T) + w theta = pi.
double critical_gain(double T, double theta) {
  double lo = 0.0, hi = kPi / theta;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::atan(mid * T) + mid * theta < kPi ? lo : hi) = mid;
  }
  return std::hypot(1.0, lo * T);
}

}  // namespace

TEST_CASE("disk margin of an integrator is two for any gain") {
  for (double k : {0.1, 1.0, 10.0}) {
    const auto loop = loop_of(RationalTf({k}, {0.0, 1.0}), {DelayTf::gain(1.0)});
    CHECK(disk_margin(loop) == doctest::Approx(2.0).epsilon(1e-3));
  }
}

TEST_CASE("classical margins of a delayed integrator match closed forms") {
  const auto loop = loop_of(RationalTf({1.0}, {0.0, 1.0}), {DelayTf::gain(1.0)}, 0.1);
  const auto m = classical_margins(loop);
  CHECK(m.phase_margin == doctest::Approx(90.0 - 0.1 * 180.0 / kPi).epsilon(1e-3));
  CHECK(m.gain_margin == doctest::Approx(kPi / 0.2).epsilon(1e-3));
  CHECK(m.delay_margin == doctest::Approx((kPi / 2 - 0.1)).epsilon(1e-3));
}

TEST_CASE("nyquist stability follows the critical gain of a delayed lag") {
  const double T = 1.0, theta = 0.3;
  const double kc = critical_gain(T, theta);
  auto with_gain = [&](double k) {
    return loop_of(RationalTf::gain(k), {DelayTf(RationalTf::first_order(1.0, T), theta)});
  };
  CHECK(nyquist_stable(with_gain(0.95 * kc)));
  CHECK_FALSE(nyquist_stable(with_gain(1.05 * kc)));
  CHECK(classical_margins(with_gain(0.5 * kc)).gain_margin == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("nyquist counts open-loop unstable poles") {
  // 1 + k/(s - 1) = (s - 1 + k)/(s - 1): stable iff k > 1.
  CHECK(nyquist_stable(loop_of(RationalTf::gain(2.0), {DelayTf(RationalTf({1.0}, {-1.0, 1.0}))})));
  CHECK_FALSE(nyquist_stable(loop_of(RationalTf::gain(0.5), {DelayTf(RationalTf({1.0}, {-1.0, 1.0}))})));
  CHECK(disk_margin(loop_of(RationalTf::gain(0.5), {DelayTf(RationalTf({1.0}, {-1.0, 1.0}))})) == 0.0);
}

TEST_CASE("routh count of right-half-plane roots") {
  // (s - 1)(s + 2)(s - 3) = s^3 - 2 s^2 - 5 s + 6
  CHECK(rhp_roots({6.0, -5.0, -2.0, 1.0}) == 2);
  CHECK(rhp_roots({6.0, 11.0, 6.0, 1.0}) == 0);  // (s+1)(s+2)(s+3)
  CHECK(rhp_roots({1.0, 0.0, 1.0}) == 0);        // s^2 + 1, roots on the axis
}

TEST_CASE("first-order step metrics") {
  const double T = 2.0;
  static double tau;
  tau = T;
  const auto tr = analytic_trace(1e-3, 20 * T, [](double t) { return 1.0 - std::exp(-t / tau); });
  const auto m = step_metrics(tr, 1.0);
  CHECK(m.stable);
  CHECK(m.rise_time == doctest::Approx(std::log(9.0) * T).epsilon(2e-3));
  CHECK(m.settling_time == doctest::Approx(std::log(20.0) * T).epsilon(2e-3));
  CHECK(m.overshoot == doctest::Approx(0.0));
}

TEST_CASE("second-order overshoot matches the damping formula") {
  const auto tr = analytic_trace(1e-3, 40.0, [](double t) {
    const double z = 0.5, wn = 1.0, wd = wn * std::sqrt(1 - z * z);
    return 1.0 - std::exp(-z * wn * t) * (std::cos(wd * t) + z / std::sqrt(1 - z * z) * std::sin(wd * t));
  });
  const auto m = step_metrics(tr, 1.0);
  CHECK(m.overshoot == doctest::Approx(100.0 * std::exp(-kPi * 0.5 / std::sqrt(0.75))).epsilon(1e-3));
}

TEST_CASE("stability verdict on growing and decaying oscillations") {
  const auto grow = analytic_trace(0.01, 60.0, [](double t) { return 1.0 + 0.01 * std::exp(0.05 * t) * std::sin(t); });
  const auto decay = analytic_trace(0.01, 60.0, [](double t) { return 1.0 + std::exp(-0.3 * t) * std::sin(t); });
  const auto hold = analytic_trace(0.01, 60.0, [](double t) { return 1.0 + 0.1 * std::sin(t); });
  CHECK_FALSE(stability_verdict(grow, 1.0));
  CHECK(stability_verdict(decay, 1.0));
  CHECK_FALSE(stability_verdict(hold, 1.0));
  CHECK_FALSE(step_metrics(grow, 1.0).stable);
  CHECK(std::isnan(step_metrics(grow, 1.0).rise_time));
}

TEST_CASE("disk margin bounds the classical margins") {
  // A balanced disk margin a guarantees GM >= (2 + a)/(2 - a) and
  // PM >= 2 atan(a / 2).
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> kd(0.05, 2.0), td(0.05, 5.0), dd(0.0, 0.5);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    const double T = td(rng);
    const auto loop = loop_of(RationalTf::pi(kd(rng), kd(rng) / T), {DelayTf(RationalTf::first_order(1.0, T), dd(rng))}, 0.1, 0.1);
    const auto m = classical_margins(loop);
    if (m.disk_margin <= 0.0 || m.disk_margin >= 2.0) continue;
    ++checked;
    const double a = m.disk_margin;
    CHECK(m.gain_margin >= (2 + a) / (2 - a) * (1 - 1e-3));
    CHECK(m.phase_margin >= 2 * std::atan(a / 2) * 180 / kPi * (1 - 1e-3));
  }
  CHECK(checked > 10);
}

TEST_CASE("feasibility combines stability, margin and overshoot") {
  const auto slow = loop_of(RationalTf::pi(0.2, 0.1), {DelayTf(RationalTf::first_order(1.0, 1.0))}, 0.1, 0.1);
  const auto f = evaluate_feasibility(slow);
  CHECK(f.stable);
  CHECK(f.disk_margin >= 1.5);
  CHECK(f.feasible == (f.step.overshoot < 1.0));
  const auto hot = loop_of(RationalTf::pi(20.0, 20.0), {DelayTf(RationalTf::first_order(1.0, 1.0), 0.5)}, 0.1, 0.1);
  CHECK_FALSE(feasible(hot));
}
