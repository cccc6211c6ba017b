#include <doctest.h>

#include <cmath>
#include <numbers>

#include "cpfc/errors.hpp"
#include "cpfc/metrics.hpp"
#include "cpfc/tuner.hpp"
#include "fleets.hpp"
#include "synthetic.hpp"

using namespace cpfc;

namespace {

DerSet small_fleet() { return fleets::small(); }

bool within_steps(double a, double b, double step, double n = 1.0) {
  return std::abs(std::log(a / b)) <= n * std::log1p(step) + 1e-12;
}

}  // namespace

TEST_CASE("config validation") {
  TuneConfig c;
  CHECK_NOTHROW(c.validate());
  c.fine_step = 0.02;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.disk_threshold = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.es_limit = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.t_meas = -1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("path search tracks convex regions to the grid optimum") {
  const TuneConfig cfg;
  for (const auto& p : {synth::triangle(1.0, 1.0, 1.0), synth::curved(1.0, 2.0, 0.5), synth::triangle(3.0, 0.2, 4.0)}) {
    const auto r = path_search(p.evaluator(), 8.0, 0.01, cfg.coarse_step, cfg);
    REQUIRE(r.found);
    const auto g = synth::brute_force(p, 8.0, 0.01, cfg.fine_step, 7000, 6000);
    REQUIRE(g.found);
    CHECK(within_steps(r.point.kp, g.kp, cfg.coarse_step));
    CHECK(within_steps(r.point.ki, g.ki, cfg.coarse_step));
    CHECK(r.point.eval.rise_time <= g.rise * (1.0 + cfg.coarse_step));
  }
}

TEST_CASE("path search reports infeasible regions") {
  const TuneConfig cfg;
  const synth::Problem none{[](double, double) { return false; }};
  const auto r = path_search(none.evaluator(), 1.0, 1.0, cfg.coarse_step, cfg);
  CHECK_FALSE(r.found);
  CHECK(r.evaluations < 2000);
  CHECK_THROWS_AS(path_search(none.evaluator(), 0.0, 1.0, 0.01, cfg), ArgumentError);
}

TEST_CASE("area search finds the global grid optimum of a non-convex region") {
  const TuneConfig cfg;
  const auto p = synth::with_island(synth::triangle(1.0, 1.0, 1.0), 0.1, 0.8, 0.05);
  const auto path = path_search(p.evaluator(), 2.0, 0.01, cfg.coarse_step, cfg);
  REQUIRE(path.found);
  CHECK(path.point.ki < 0.6);  // the path cannot see the island

  const double ki_init = 1.0, step = cfg.fine_step;
  const SearchPoint area = area_search(p.evaluator(), path.point, ki_init, step);

  long n_kp = 0;
  for (double kp = path.point.kp; kp >= 1e-4 * path.point.kp; kp -= kp * step) ++n_kp;
  long n_ki = 0;
  for (double ki = path.point.ki * (1 + step); ki <= ki_init * (1 + 1e-12); ki += ki * step) ++n_ki;
  auto g = synth::brute_force(p, path.point.kp, path.point.ki * (1 + step), step, n_kp, n_ki);
  if (!(g.rise < path.point.eval.rise_time)) g = {true, path.point.kp, path.point.ki, path.point.eval.rise_time};
  CHECK(area.kp == g.kp);
  CHECK(area.ki == g.ki);
  CHECK(area.ki > 0.75);
}

TEST_CASE("convexity indicator") {
  TuneConfig cfg;
  CHECK(convexity_indicator(1.0, 0.8, cfg) == doctest::Approx(1.0));
  const auto fleet = small_fleet();
  CHECK(convexity_indicator(fleet, 1, 0.725, cfg) == doctest::Approx(1.0));
}

TEST_CASE("ultimate-gain guess on a third-order lag") {
  // 1/(1+s)^3 crosses -180 deg at w = sqrt(3) with |G| = 1/8.
  auto plant = [](double w) { return 1.0 / std::pow(Complex(1.0, w), 3); };
  const Evaluator never = [](double, double, double) { return Evaluation{}; };
  const auto g = initial_guess(plant, 1.0, never);
  REQUIRE(g.from_crossover);
  CHECK(g.ultimate_gain == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(g.ultimate_period == doctest::Approx(2 * std::numbers::pi / std::sqrt(3.0)).epsilon(1e-6));
  CHECK(g.kp == doctest::Approx(3.6).epsilon(1e-6));
  CHECK(g.ki == doctest::Approx(3.6 / (0.83 * g.ultimate_period)).epsilon(1e-6));

  const Evaluator always = [](double, double, double) {
    Evaluation e;
    e.feasible = true;
    return e;
  };
  CHECK(initial_guess(plant, 1.0, always).kp == doctest::Approx(3.6 * std::pow(2.0, 60)));
}

TEST_CASE("evaluator agrees with the independent feasibility check") {
  const TuneConfig cfg;
  const auto fleet = small_fleet();
  const LoopEvaluator ev(aggregate_plant(fleet, 7), cfg);
  for (double kp : {1e-8, 1e-7, 1e-6}) {
    for (double ki : {1e-7, 5e-7, 2e-6}) {
      const auto a = ev(kp, ki);
      const auto b = evaluate_feasibility(ev.loop(kp, ki), cfg.thresholds());
      CHECK(a.feasible == b.feasible);
      if (a.feasible) CHECK(a.rise_time == doctest::Approx(b.step.rise_time).epsilon(1e-9));
    }
  }
}

TEST_CASE("tuned table is feasible, deterministic and round-trips") {
  TuneConfig cfg;
  cfg.threads = 1;
  const auto fleet = small_fleet();
  const CpTable t1 = tune_all(fleet, cfg);
  REQUIRE(t1.complete());
  CHECK(t1.entries.size() == 7);
  for (const auto& [mask, e] : t1.entries) {
    const auto loop = build_loop(e.kp, e.ki, aggregate_plant(fleet, mask), cfg.t_com, cfg.t_meas);
    const auto f = evaluate_feasibility(loop, cfg.thresholds());
    CHECK(f.feasible);
    CHECK(f.disk_margin >= 1.5);
    CHECK(f.step.overshoot < 1.0);
    CHECK(e.w.size() == fleet.active(mask).size());
    const auto idx = fleet.active(mask);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      CHECK(e.w[j] > 0.0);
      CHECK(e.w[j] <= 1.0);
      const auto single = build_loop(e.kp, e.ki, {build_der_tf(fleet[idx[j]], e.w[j])}, cfg.t_com, cfg.t_meas);
      CHECK(evaluate_feasibility(single, cfg.thresholds()).feasible);
    }
    if (idx.size() == 1) CHECK(e.w[0] == 1.0);
  }

  cfg.threads = 3;
  const CpTable t2 = tune_all(fleet, cfg);
  CHECK(cp_table_to_json(t1, false) == cp_table_to_json(t2, false));

  const CpTable back = cp_table_from_json(cp_table_to_json(t1));
  CHECK(cp_table_to_json(back, false) == cp_table_to_json(t1, false));
  CHECK(back.der_hash == fleet.hash());
}

TEST_CASE("table files reject malformed content") {
  CHECK_THROWS_AS(cp_table_from_json("{", "cp.json"), ParseError);
  try {
    cp_table_from_json(R"({"1": {"kp": "x", "ki": 1, "w": [1]}, "metadata": {"der_count": 1}})", "cp.json");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("cp.json") != std::string::npos);
  }
}

TEST_CASE("static pair is feasible on every mask") {
  TuneConfig cfg;
  const auto fleet = small_fleet();
  const StaticResult r = tune_static(fleet, cfg);
  for (Mask m : enumerate_combos(fleet.size())) {
    const auto loop = build_loop(r.kp, r.ki, aggregate_plant(fleet, m), cfg.t_com, cfg.t_meas);
    CHECK(evaluate_feasibility(loop, cfg.thresholds()).feasible);
  }
  const StaticResult back = static_from_json(static_to_json(r, fleet, cfg));
  CHECK(back.kp == r.kp);
  CHECK(back.ki == r.ki);
}
