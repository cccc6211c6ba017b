#include "cpfc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cpfc/errors.hpp"
#include "cpfc/io.hpp"
#include "cpfc/parallel.hpp"

namespace cpfc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SweepRow evaluate_row(Mask mask, const LoopModel& loop) {
  SweepRow row;
  row.mask = mask;
  const MarginReport m = classical_margins(loop);
  row.disk_margin = m.disk_margin;
  row.gain_margin = m.gain_margin;
  row.phase_margin = m.phase_margin;
  row.delay_margin = m.delay_margin;
  SimOptions opt;
  opt.abort_magnitude = 10.0;
  const StepMetrics sm = step_metrics(simulate_closed_loop_step(loop, 1.0, opt), 1.0);
  row.stable = sm.stable;
  row.overshoot = sm.overshoot;
  row.rise_time = sm.rise_time;
  row.settling_time = sm.settling_time;
  return row;
}

}  // namespace

std::vector<SweepRow> robustness_sweep(const DerSet& set, const CpTable& table, std::size_t threads) {
  const auto masks = enumerate_combos(set.size());
  for (Mask m : masks) table.at(m);
  const TuneConfig& cfg = table.config;
  std::vector<SweepRow> rows(masks.size());
  parallel_for(
      masks.size(),
      [&](std::size_t i) {
        const CpEntry& e = table.at(masks[i]);
        rows[i] = evaluate_row(masks[i], build_loop(e.kp, e.ki, aggregate_plant(set, masks[i], e.w), cfg.t_com, cfg.t_meas));
      },
      threads);
  return rows;
}

std::vector<SweepRow> robustness_sweep(const DerSet& set, double kp, double ki, double t_com, double t_meas,
                                       std::size_t threads) {
  const auto masks = enumerate_combos(set.size());
  std::vector<SweepRow> rows(masks.size());
  parallel_for(
      masks.size(),
      [&](std::size_t i) { rows[i] = evaluate_row(masks[i], build_loop(kp, ki, aggregate_plant(set, masks[i]), t_com, t_meas)); },
      threads);
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "mask,disk_margin,gain_margin,phase_margin_deg,delay_margin_s,overshoot_pct,rise_time_s,settling_time_s,stable\n";
  for (const auto& r : rows)
    out << r.mask << ',' << format_number(r.disk_margin) << ',' << format_number(r.gain_margin) << ','
        << format_number(r.phase_margin) << ',' << format_number(r.delay_margin) << ',' << format_number(r.overshoot)
        << ',' << format_number(r.rise_time) << ',' << format_number(r.settling_time) << ',' << (r.stable ? 1 : 0)
        << '\n';
  return out.str();
}

double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

namespace {

class UncertaintyProbe {
 public:
  UncertaintyProbe(const DerSet& set, const CpTable& table, ModelType model, const UncertaintyOptions& opt)
      : set_(set), table_(table), model_(model), opt_(opt), masks_(enumerate_combos(set.size())) {
    for (Mask m : masks_) table.at(m);
    base_rise_.resize(masks_.size());
    base_settle_.resize(masks_.size());
    if (opt.time_domain) {
      parallel_for(
          masks_.size(),
          [&](std::size_t i) {
            const StepMetrics sm = metrics(i, 1.0);
            base_rise_[i] = sm.rise_time;
            base_settle_[i] = sm.settling_time;
          },
          opt.threads);
    }
  }

  bool stable(double b) {
    auto& p = point(b);
    if (!p.stability_known) {
      std::vector<char> ok(masks_.size(), 1);
      parallel_for(masks_.size(), [&](std::size_t i) { ok[i] = nyquist_stable(loop(i, b)) ? 1 : 0; }, opt_.threads);
      p.value.stable = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
      p.stability_known = true;
    }
    return p.value.stable;
  }

  const UncertaintyPoint& ratios(double b) {
    auto& p = point(b);
    if (!p.ratios_known) {
      std::vector<double> rise(masks_.size()), settle(masks_.size());
      parallel_for(
          masks_.size(),
          [&](std::size_t i) {
            const StepMetrics sm = metrics(i, b);
            rise[i] = sm.stable ? sm.rise_time / base_rise_[i] : kInf;
            settle[i] = sm.stable ? sm.settling_time / base_settle_[i] : kInf;
          },
          opt_.threads);
      p.value.worst_rise_ratio = *std::max_element(rise.begin(), rise.end());
      p.value.worst_settling_ratio = *std::max_element(settle.begin(), settle.end());
      p.ratios_known = true;
    }
    return p.value;
  }

  std::vector<UncertaintyPoint> points() const {
    std::vector<UncertaintyPoint> out;
    for (const auto& [b, p] : points_) out.push_back(p.value);
    return out;
  }

 private:
  struct Slot {
    UncertaintyPoint value;
    bool stability_known = false;
    bool ratios_known = false;
  };

  Slot& point(double b) {
    auto [it, inserted] = points_.try_emplace(b);
    if (inserted) it->second.value.b = b;
    return it->second;
  }

  LoopModel loop(std::size_t i, double b) const {
    const CpEntry& e = table_.at(masks_[i]);
    return build_loop(e.kp, e.ki, aggregate_plant(set_, masks_[i], e.w, b, model_), table_.config.t_com,
                      table_.config.t_meas);
  }

  StepMetrics metrics(std::size_t i, double b) const {
    SimOptions so;
    so.abort_magnitude = 10.0;
    return step_metrics(simulate_closed_loop_step(loop(i, b), 1.0, so), 1.0);
  }

  const DerSet& set_;
  const CpTable& table_;
  ModelType model_;
  UncertaintyOptions opt_;
  std::vector<Mask> masks_;
  std::vector<double> base_rise_, base_settle_;
  std::map<double, Slot> points_;
};

// Geometric bisection between a b where pred is false and one where it is
// true; returns the end where pred holds.
template <typename Pred>
double refine(double good, double bad, double tol, Pred pred) {
  while (std::max(good, bad) / std::min(good, bad) > 1.0 + tol) {
    const double mid = std::sqrt(good * bad);
    if (pred(mid)) bad = mid;
    else good = mid;
  }
  return bad;
}

}  // namespace

UncertaintyResult uncertainty_sweep(const DerSet& set, const CpTable& table, ModelType model,
                                    const UncertaintyOptions& opt) {
  if (!(opt.factor > 1.0) || !(opt.b_upper > 1.0) || !(opt.b_lower > 0.0 && opt.b_lower < 1.0) || !(opt.tolerance > 0.0))
    throw ArgumentError("invalid uncertainty sweep options");
  UncertaintyProbe probe(set, table, model, opt);
  UncertaintyResult res;
  res.model = model;
  probe.stable(1.0);
  if (opt.time_domain) probe.ratios(1.0);

  for (int dir : {+1, -1}) {
    const bool up = dir > 0;
    bool need_rise = opt.time_domain, need_settle = opt.time_domain;
    double prev = 1.0;
    while (true) {
      const double b = up ? std::min(prev * opt.factor, opt.b_upper) : std::max(prev / opt.factor, opt.b_lower);
      if (b == prev) break;
      if (!probe.stable(b)) {
        const double thr = refine(prev, b, opt.tolerance, [&](double x) { return !probe.stable(x); });
        (up ? res.b_max_unstable : res.b_min_unstable) = thr;
        break;
      }
      if (need_rise || need_settle) {
        const auto& pt = probe.ratios(b);
        if (need_rise && pt.worst_rise_ratio >= 2.0) {
          const double thr = refine(prev, b, opt.tolerance, [&](double x) { return probe.ratios(x).worst_rise_ratio >= 2.0; });
          (up ? res.b_max_2x_rise : res.b_min_2x_rise) = thr;
          need_rise = false;
        }
        const auto& pt2 = probe.ratios(b);
        if (need_settle && pt2.worst_settling_ratio >= 2.0) {
          const double thr = refine(prev, b, opt.tolerance, [&](double x) { return probe.ratios(x).worst_settling_ratio >= 2.0; });
          (up ? res.b_max_2x_settling : res.b_min_2x_settling) = thr;
          need_settle = false;
        }
      }
      prev = b;
    }
  }
  res.points = probe.points();
  return res;
}

std::string uncertainty_to_csv(const UncertaintyResult& r) {
  std::ostringstream out;
  out << "b,stable,worst_rise_ratio,worst_settling_ratio\n";
  for (const auto& p : r.points)
    out << format_number(p.b) << ',' << (p.stable ? 1 : 0) << ',' << format_number(p.worst_rise_ratio) << ','
        << format_number(p.worst_settling_ratio) << '\n';
  out << "\nmodel,b_min_unstable,b_max_unstable,b_min_2x_rise,b_max_2x_rise,b_min_2x_settling,b_max_2x_settling\n";
  out << to_string(r.model) << ',' << format_number(r.b_min_unstable) << ',' << format_number(r.b_max_unstable) << ','
      << format_number(r.b_min_2x_rise) << ',' << format_number(r.b_max_2x_rise) << ','
      << format_number(r.b_min_2x_settling) << ',' << format_number(r.b_max_2x_settling) << '\n';
  return out.str();
}

}  // namespace cpfc
