#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cpfc/errors.hpp"
#include "cpfc/lti.hpp"

using namespace cpfc;

namespace {

LoopModel unit_loop(double kp, double ki, std::vector<DelayTf> branches, double t_com = 0.0, double t_meas = 0.0) {
  return LoopModel(DelayTf(RationalTf::pi(kp, ki)), DelayTf::pure_delay(t_com), std::move(branches),
                   DelayTf::pure_delay(t_meas));
}

}  // namespace

TEST_CASE("rational evaluation uses ascending coefficients") {
  RationalTf tf({1.0, 2.0}, {3.0, 0.0, 1.0});  // (1 + 2s) / (3 + s^2)
  const Complex s(0.0, 2.0);
  const Complex expect = (1.0 + 2.0 * s) / (3.0 + s * s);
  CHECK(std::abs(tf.eval(s) - expect) < 1e-14);
  CHECK(tf.dc_gain() == doctest::Approx(1.0 / 3.0));
  CHECK(tf.order() == 2);
}

TEST_CASE("construction rejects bad polynomials") {
  CHECK_THROWS_AS(RationalTf({1.0}, {}), ArgumentError);
  CHECK_THROWS_AS(RationalTf({1.0}, {0.0, 0.0}), ArgumentError);
  CHECK_THROWS_AS(RationalTf({1.0, 1.0, 1.0}, {1.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(RationalTf({NAN}, {1.0}), ArgumentError);
  CHECK_THROWS_AS(DelayTf(RationalTf::gain(1.0), -0.1), ArgumentError);
}

TEST_CASE("integrator has no dc gain and one origin pole") {
  const auto pi = RationalTf::pi(2.0, 3.0);
  CHECK(pi.origin_poles() == 1);
  CHECK_THROWS_AS(pi.dc_gain(), SingularFrequencyError);
  CHECK_THROWS_AS(freq_response(DelayTf(pi), 0.0), SingularFrequencyError);
}

TEST_CASE("delay is an exact phase rotation") {
  const DelayTf d(RationalTf::first_order(2.0, 0.5), 0.3);
  for (double w : {0.01, 0.7, 3.0, 40.0}) {
    const Complex rat = RationalTf::first_order(2.0, 0.5).eval(Complex(0.0, w));
    const Complex got = freq_response(d, w);
    CHECK(std::abs(got) == doctest::Approx(std::abs(rat)).epsilon(1e-12));
    const double dphi = std::remainder(std::arg(got) - std::arg(rat) + 0.3 * w, 2 * std::numbers::pi);
    CHECK(std::abs(dphi) < 1e-12);
  }
}

TEST_CASE("merged branches keep the frequency response") {
  std::vector<DelayTf> br = {DelayTf(RationalTf::first_order(1.0, 2.0), 0.1),
                             DelayTf(RationalTf::first_order(3.0, 2.0), 0.1),
                             DelayTf(RationalTf::first_order(1.0, 0.5), 0.0)};
  const auto merged = merge_branches(br);
  CHECK(merged.size() == 2);
  for (double w : {0.05, 1.0, 9.0}) {
    Complex a = 0.0, b = 0.0;
    for (const auto& x : br) a += freq_response(x, w);
    for (const auto& x : merged) b += freq_response(x, w);
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("open-loop first-order step matches the analytic response") {
  const double T = 0.8;
  auto loop = unit_loop(1.0, 0.0, {DelayTf(RationalTf::first_order(1.0, T))});
  loop.controller = DelayTf::gain(1.0);
  const auto tr = simulate_open_loop_step(loop, 1.0, 1e-3, 4.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.y.size(); ++k)
    worst = std::max(worst, std::abs(tr.y[k] - (1.0 - std::exp(-tr.time(k) / T))));
  CHECK(worst < 1e-3);
}

TEST_CASE("sample-aligned delays shift the response exactly") {
  auto base = unit_loop(1.0, 0.0, {DelayTf(RationalTf::first_order(1.0, 0.5))});
  base.controller = DelayTf::gain(1.0);
  auto delayed = base;
  delayed.branches = {DelayTf(RationalTf::first_order(1.0, 0.5), 0.05)};
  const double dt = 0.01;
  const auto a = simulate_open_loop_step(base, 1.0, dt, 2.0);
  const auto b = simulate_open_loop_step(delayed, 1.0, dt, 2.0);
  for (std::size_t k = 0; k < 5; ++k) CHECK(b.y[k] == 0.0);
  for (std::size_t k = 5; k < b.y.size(); ++k) CHECK(b.y[k] == doctest::Approx(a.y[k - 5]).epsilon(1e-12));
}

TEST_CASE("proportional loop settles at kp K / (1 + kp K)") {
  for (double kp : {0.5, 2.0}) {
    auto loop = unit_loop(kp, 0.0, {DelayTf(RationalTf::first_order(1.5, 1.0))});
    loop.controller = DelayTf::gain(kp);
    const auto tr = simulate_closed_loop_step(loop, 1.0, 1e-3, 30.0);
    CHECK(tr.y.back() == doctest::Approx(1.5 * kp / (1.0 + 1.5 * kp)).epsilon(1e-6));
  }
}

TEST_CASE("integral action removes the steady-state error for any amplitude") {
  auto loop = unit_loop(0.5, 0.8, {DelayTf(RationalTf::first_order(1.0, 1.0), 0.2)}, 0.1, 0.1);
  for (double amp : {1.0, -3.0, 1e6}) {
    const auto tr = simulate_closed_loop_step(loop, amp, 0.01, 80.0);
    CHECK(tr.y.back() == doctest::Approx(amp).epsilon(1e-6));
  }
}

TEST_CASE("closed-loop response scales linearly with the amplitude") {
  auto loop = unit_loop(0.3, 0.4, {DelayTf(RationalTf::first_order(1.0, 0.7), 0.05)}, 0.1, 0.1);
  const auto a = simulate_closed_loop_step(loop, 1.0, 0.01, 20.0);
  const auto b = simulate_closed_loop_step(loop, 2.5, 0.01, 20.0);
  for (std::size_t k = 0; k < a.y.size(); ++k) CHECK(b.y[k] == doctest::Approx(2.5 * a.y[k]).epsilon(1e-9));
}

TEST_CASE("loop without measurement delay is solved algebraically") {
  // y = (kp e) with e = r - y for a static plant: y = kp/(1+kp) immediately.
  LoopModel loop(DelayTf::gain(3.0), DelayTf::pure_delay(0.0), {DelayTf::gain(1.0)}, DelayTf::pure_delay(0.0));
  const auto tr = simulate_closed_loop_step(loop, 1.0, 0.01, 1.0);
  CHECK(tr.y[1] == doctest::Approx(0.75));
}

TEST_CASE("auto step and horizon stay in range") {
  for (double t : {1e-3, 0.1, 5.0, 50.0}) {
    auto loop = unit_loop(0.1, 0.05, {DelayTf(RationalTf::first_order(1.0, t), t / 10)}, 0.1, 0.1);
    const double dt = auto_dt(loop);
    CHECK(dt >= 1e-4);
    CHECK(dt <= 0.05);
    CHECK(auto_horizon(loop) >= 100 * 0.2);
  }
}

TEST_CASE("divergent loops abort on the magnitude bound") {
  auto loop = unit_loop(50.0, 50.0, {DelayTf(RationalTf::first_order(1.0, 0.1), 0.5)}, 0.1, 0.1);
  SimOptions opt;
  opt.abort_magnitude = 10.0;
  opt.horizon = 200.0;
  opt.dt = 0.01;
  const auto tr = simulate_closed_loop_step(loop, 1.0, opt);
  CHECK(tr.diverged);
  CHECK(tr.duration() < 200.0);
}

TEST_CASE("discrete block and delay line") {
  DiscreteTf pt1(RationalTf::first_order(2.0, 1.0), 0.01);
  pt1.reset_steady(3.0);
  CHECK(pt1.step(3.0) == doctest::Approx(6.0));
  CHECK(pt1.peek(3.0) == doctest::Approx(6.0));

  SampleDelay d(3);
  CHECK(d.step(1.0) == 0.0);
  CHECK(d.step(2.0) == 0.0);
  CHECK(d.step(3.0) == 0.0);
  CHECK(d.front() == 1.0);
  CHECK(d.step(4.0) == 1.0);
  CHECK(delay_samples(0.1, 0.01) == 10);
  CHECK(delay_samples(0.0, 0.01) == 0);
}
