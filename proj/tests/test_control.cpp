#include <doctest.h>

#include <cmath>
#include <random>

#include "cpfc/control.hpp"
#include "cpfc/errors.hpp"

using namespace cpfc;

namespace {

DerSet pair_fleet() {
  DerSpec a, b;
  a.name = "A";
  a.kind = DerKind::WT;
  a.p_inst = 2e6;
  a.t_rise = 0.5;
  b.name = "B";
  b.kind = DerKind::CHP;
  b.p_inst = 3e5;
  b.t_delay = 1.0;
  b.t_rise = 24.0;
  b.schedule = {{0.0, 1e5}, {10.0, 2e5}};
  return DerSet({a, b});
}

CpTable hand_table() {
  CpTable t;
  t.der_count = 2;
  auto add = [&](Mask m, double kp, double ki, std::vector<double> w) {
    CpEntry e;
    e.mask = m;
    e.kp = kp;
    e.ki = ki;
    e.w = std::move(w);
    t.entries[m] = e;
  };
  add(1, 1e-7, 2e-7, {1.0});
  add(2, 4e-8, 3e-9, {1.0});
  add(3, 5e-8, 6e-9, {0.8, 1.0});
  return t;
}

}  // namespace

TEST_CASE("availability vectors and masks convert both ways") {
  const Availability a{true, false, true, true};
  CHECK(availability_mask(a) == 0b1101);
  CHECK(availability_from_mask(0b1101, 4) == a);
  CHECK_THROWS_AS(availability_from_mask(0b10000, 4), ArgumentError);
}

TEST_CASE("parameter selection") {
  const CpTable t = hand_table();
  CHECK_FALSE(select_params(t, Mask{0}).has_value());
  CHECK(select_params(t, Mask{2})->ki == 3e-9);
  CHECK(select_params(t, Availability{true, true})->kp == 5e-8);
  CpTable partial = t;
  partial.entries.erase(3);
  CHECK_THROWS_AS(select_params(partial, Mask{3}), ConfigError);
}

TEST_CASE("integrator reset preserves the integral output") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> x(-1e9, 1e9), k(-12.0, -3.0);
  for (int i = 0; i < 1000; ++i) {
    const double xi = x(rng), ko = std::pow(10.0, k(rng)), kn = std::pow(10.0, k(rng));
    const double x0 = integrator_reset(xi, ko, kn);
    CHECK(kn * x0 == doctest::Approx(ko * xi).epsilon(1e-14));
  }
  CHECK(integrator_reset(5.0, 2.0, 2.0) == 5.0);
  CHECK_THROWS_AS(integrator_reset(1.0, 0.0, 1.0), ArgumentError);
}

TEST_CASE("pi step integrates before the output") {
  PiState s;
  s.kp_active = 2.0;
  s.ki_active = 0.5;
  CHECK(pi_step(1.0, s, 0.1) == doctest::Approx(2.0 + 0.5 * 0.1));
  CHECK(s.x_i == doctest::Approx(0.1));
  CHECK_THROWS_AS(pi_step(1.0, s, 0.0), ArgumentError);
}

TEST_CASE("gain switch is bumpless for the integral term") {
  const CpTable t = hand_table();
  GainScheduledController c(t);
  CHECK_FALSE(c.set_availability(3));
  const double dt = 0.01;
  for (int k = 0; k < 500; ++k) c.step(1e5, dt);
  const double before = c.state().integral_output();
  REQUIRE(before != 0.0);
  CHECK(c.set_availability(2));  // ki 6e-9 -> 3e-9
  const double after = c.state().integral_output();
  CHECK(std::abs(after - before) <= 4 * std::numeric_limits<double>::epsilon() * std::abs(before));
  const double e = -3e4;
  c.step(e, dt);
  CHECK(c.state().integral_output() - after == doctest::Approx(3e-9 * e * dt).epsilon(1e-6));
  CHECK(c.state().ki_prev == 6e-9);
}

TEST_CASE("empty availability holds output and integrator") {
  const CpTable t = hand_table();
  GainScheduledController c(t);
  c.set_availability(1);
  for (int k = 0; k < 10; ++k) c.step(1e4, 0.01);
  const double y = c.output();
  const double x = c.state().x_i;
  c.set_availability(0);
  CHECK(c.holding());
  for (int k = 0; k < 10; ++k) CHECK(c.step(-5e5, 0.01) == y);
  CHECK(c.state().x_i == x);
  c.set_availability(1);
  CHECK(c.state().x_i == x);  // same ki, no reset
}

TEST_CASE("w factors follow the active mask") {
  const CpTable t = hand_table();
  GainScheduledController c(t);
  c.set_availability(3);
  CHECK(c.w() == std::vector<double>{0.8, 1.0});
  c.set_availability(2);
  CHECK(c.w() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("dispatch splits the controller output by participation") {
  const DerSet fleet = pair_fleet();
  const double p_y = 0.25;
  const auto sp = dispatch_setpoints(p_y, fleet, 3, 12.0, {0.5, 1.0});
  CHECK(sp[0] == doctest::Approx(0.25 * 0.5 * 2e6));
  CHECK(sp[1] == doctest::Approx(0.25 * 3e5 + 2e5));
  const auto only_a = dispatch_setpoints(p_y, fleet, 1, 5.0);
  CHECK(only_a[1] == 1e5);  // schedule only
  const auto sat = dispatch_setpoints(10.0, fleet, 3, 0.0, {}, true);
  CHECK(sat[0] == 2e6);
  CHECK(sat[1] == 3e5);
  CHECK_THROWS_AS(dispatch_setpoints(NAN, fleet, 3, 0.0), ArgumentError);
  CHECK_THROWS_AS(dispatch_setpoints(1.0, fleet, 3, 0.0, {1.0}), ArgumentError);
}
