#include "cpfc/tuner.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <ctime>
#include <memory>
#include <mutex>
#include <numbers>

#include <json.hpp>

#include "cpfc/errors.hpp"
#include "cpfc/io.hpp"
#include "cpfc/parallel.hpp"

namespace cpfc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;
constexpr std::size_t kStaticBatch = 8;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Evaluator as_evaluator(const LoopEvaluator& ev) {
  return [&ev](double kp, double ki, double cutoff) { return ev(kp, ki, cutoff); };
}

}  // namespace

void TuneConfig::validate() const {
  if (!(fine_step > 0.0 && fine_step < coarse_step && coarse_step < 1.0))
    throw ArgumentError("step sizes must satisfy 0 < fine < coarse < 1");
  if (es_limit < 1) throw ArgumentError("es_limit must be >= 1");
  if (!(disk_threshold > 0.0)) throw ArgumentError("disk threshold must be > 0");
  if (!(overshoot_threshold > 0.0)) throw ArgumentError("overshoot threshold must be > 0");
  if (!(w_step_fraction > 0.0 && w_step_fraction < 1.0)) throw ArgumentError("w step must lie in (0, 1)");
  if (!(w_floor > 0.0 && w_floor <= 1.0)) throw ArgumentError("w floor must lie in (0, 1]");
  if (!(t_com >= 0.0) || !(t_meas >= 0.0)) throw ArgumentError("delays must be >= 0");
  if (max_iterations == 0) throw ArgumentError("iteration cap must be positive");
  if (start_retries < 0) throw ArgumentError("start retries must be >= 0");
}

// ---------------------------------------------------------------------------

LoopEvaluator::LoopEvaluator(std::vector<DelayTf> branches, const TuneConfig& cfg)
    : branches_(std::move(branches)), cfg_(cfg) {
  const LoopModel unit(DelayTf::gain(1.0), DelayTf::pure_delay(cfg.t_com), branches_,
                       DelayTf::pure_delay(cfg.t_meas));
  const auto& grid = FrequencyGrid::standard().omega;
  plant_.resize(grid.size());
  plant_over_jw_.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    plant_[i] = loop_transfer(unit, grid[i]);
    plant_over_jw_[i] = plant_[i] / Complex(0.0, grid[i]);
  }
  time_scale_ = branch_time_scale(branches_) + cfg.t_com + cfg.t_meas;
}

LoopModel LoopEvaluator::loop(double kp, double ki) const {
  return build_loop(kp, ki, branches_, cfg_.t_com, cfg_.t_meas);
}

bool LoopEvaluator::passes_grid_disk(double kp, double ki) const {
  // alpha = 2|1+L|/|1-L| < thr  <=>  |1-L|^2 > (2/thr)^2 |1+L|^2
  const double r = 2.0 / cfg_.disk_threshold;
  const double limit = r * r;
  const std::size_t n = plant_.size();
  for (std::size_t stride : {std::size_t{16}, std::size_t{1}}) {
    for (std::size_t i = 0; i < n; i += stride) {
      const Complex l = kp * plant_[i] + ki * plant_over_jw_[i];
      if (std::norm(1.0 - l) > limit * std::norm(1.0 + l)) return false;
    }
  }
  return true;
}

double LoopEvaluator::grid_margin(double kp, double ki) const {
  std::vector<Complex> l(plant_.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = kp * plant_[i] + ki * plant_over_jw_[i];
  return grid_disk_margin(l);
}

Evaluation LoopEvaluator::operator()(double kp, double ki, double rise_cutoff) const {
  Evaluation e;
  if (!passes_grid_disk(kp, ki)) return e;
  const LoopModel lp = loop(kp, ki);
  SimOptions opt;
  opt.abort_magnitude = 10.0;
  opt.abort_above = 1.0 + cfg_.overshoot_threshold;
  if (std::isfinite(rise_cutoff)) {
    const double dt = auto_dt(lp);
    opt.rise_cutoff = rise_cutoff * (1.0 + 1e-3) + 2.0 * dt;
  }
  const StepTrace trace = simulate_closed_loop_step(lp, 1.0, opt);
  if (trace.aborted) {
    e.overshoot = (*std::max_element(trace.y.begin(), trace.y.end()) - 1.0) * 100.0;
    return e;
  }
  if (trace.cut || trace.diverged) return e;
  const StepMetrics sm = step_metrics(trace, 1.0);
  if (!sm.stable || !std::isfinite(sm.rise_time)) return e;
  e.overshoot = sm.overshoot;
  e.rise_time = sm.rise_time;
  if (!(sm.overshoot < 100.0 * cfg_.overshoot_threshold)) return e;
  e.disk_margin = disk_margin(lp);
  e.feasible = e.disk_margin >= cfg_.disk_threshold;
  return e;
}

// ---------------------------------------------------------------------------

InitialGuess initial_guess(const std::function<Complex(double)>& plant, double time_scale,
                           const Evaluator& eval) {
  InitialGuess g;
  const auto& w = FrequencyGrid::standard().omega;
  // First crossing of -180 deg by the unwrapped plant phase.
  Complex prev = plant(w[0]);
  double phase = std::arg(prev);
  double w180 = 0.0;
  for (std::size_t i = 1; i < w.size() && w180 == 0.0; ++i) {
    const Complex cur = plant(w[i]);
    const double next = phase + std::arg(cur / prev);
    if (next <= -kPi && phase > -kPi) {
      double lo = std::log(w[i - 1]), hi = std::log(w[i]);
      double plo = phase;
      Complex clo = prev;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        const Complex cm = plant(std::exp(mid));
        const double pm = plo + std::arg(cm / clo);
        if (pm > -kPi) {
          lo = mid;
          plo = pm;
          clo = cm;
        } else {
          hi = mid;
        }
      }
      w180 = std::exp(0.5 * (lo + hi));
    }
    phase = next;
    prev = cur;
  }
  if (w180 > 0.0) {
    g.from_crossover = true;
    g.ultimate_gain = 1.0 / std::abs(plant(w180));
    g.ultimate_period = 2.0 * kPi / w180;
    g.kp = 0.45 * g.ultimate_gain;
    g.ki = g.kp / (0.83 * g.ultimate_period);
  } else {
    const double dc = std::abs(plant(0.0));
    if (!(dc > 0.0)) throw ArgumentError("plant has zero DC gain");
    g.kp = 1.0 / dc;
    g.ki = g.kp / (0.83 * 4.0 * std::max(time_scale, 1e-3));
  }
  for (int n = 0; n < 60 && eval(g.kp, g.ki, kInf).feasible; ++n) g.kp *= 2.0;
  return g;
}

InitialGuess initial_guess(const LoopEvaluator& ev) {
  const auto& grid = FrequencyGrid::standard().omega;
  const auto& samples = ev.plant_samples();
  const LoopModel unit(DelayTf::gain(1.0), ev.loop(1.0, 1.0).comm, ev.branches(), ev.loop(1.0, 1.0).meas);
  auto plant = [&](double w) {
    // grid points are reused, everything else evaluated directly
    const auto it = std::lower_bound(grid.begin(), grid.end(), w);
    if (it != grid.end() && *it == w) return samples[static_cast<std::size_t>(it - grid.begin())];
    return loop_transfer(unit, w);
  };
  return initial_guess(plant, ev.time_scale(), as_evaluator(ev));
}

SearchResult path_search(const Evaluator& eval, double kp_start, double ki_start, double step,
                         const TuneConfig& cfg) {
  if (!(kp_start > 0.0) || !(ki_start > 0.0)) throw ArgumentError("path start must be positive");
  if (!(step > 0.0 && step < 1.0)) throw ArgumentError("step must lie in (0, 1)");
  SearchResult r;
  double kp = kp_start, ki = ki_start;
  const double kp_floor = 1e-6 * kp_start;
  int es = 0;
  for (r.iterations = 0; r.iterations < cfg.max_iterations; ++r.iterations) {
    const Evaluation e = eval(kp, ki, kInf);
    ++r.evaluations;
    if (e.feasible) {
      r.found = true;
      r.point = {kp, ki, e};
      es = 0;
      ki += ki * step;
    } else {
      kp -= kp * step;
      if (r.found && ++es >= cfg.es_limit) break;
      if (kp < kp_floor) break;
    }
  }
  return r;
}

double convexity_indicator(double rise_path, double t_avg, const TuneConfig& cfg) {
  return rise_path / (t_avg + cfg.t_meas + cfg.t_com);
}

double convexity_indicator(const DerSet& set, Mask mask, double rise_path, const TuneConfig& cfg) {
  return convexity_indicator(rise_path, average_time(set, mask), cfg);
}

SearchPoint area_search(const Evaluator& eval, const SearchPoint& path, double ki_init, double step,
                        std::size_t* evaluations) {
  SearchPoint best = path;
  const double kp_floor = 1e-4 * path.kp;
  std::size_t count = 0;
  for (double ki = path.ki * (1.0 + step); ki <= ki_init * (1.0 + 1e-12); ki += ki * step) {
    for (double kp = path.kp; kp >= kp_floor; kp -= kp * step) {
      const Evaluation e = eval(kp, ki, best.eval.rise_time);
      ++count;
      if (e.feasible && e.rise_time < best.eval.rise_time) best = {kp, ki, e};
    }
  }
  if (evaluations) *evaluations += count;
  return best;
}

// ---------------------------------------------------------------------------

WResult find_w(const DerSet& set, Mask mask, double kp, double ki, const TuneConfig& cfg) {
  WResult out;
  const Thresholds thr = cfg.thresholds();
  for (auto idx : set.active(mask)) {
    const LoopEvaluator single({build_der_tf(set[idx])}, cfg);
    const auto max_steps = static_cast<long>(std::floor((1.0 - cfg.w_floor) / cfg.w_step_fraction + 1e-9));
    double w = 1.0;
    bool ok = false;
    for (long n = 0; n <= max_steps; ++n) {
      w = 1.0 - static_cast<double>(n) * cfg.w_step_fraction;
      // Scaling the branch by w is the same loop as scaling both gains by w.
      if (!single(w * kp, w * ki).feasible) continue;
      if (n == 0) {
        ok = true;
        break;
      }
      const LoopModel lp = build_loop(kp, ki, {build_der_tf(set[idx], w)}, cfg.t_com, cfg.t_meas);
      if (evaluate_feasibility(lp, thr).feasible) {
        ok = true;
        break;
      }
    }
    if (!ok) w = cfg.w_floor;
    out.w.push_back(w);
    out.floored.push_back(!ok);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct PassResult {
  SearchPoint point;
  MaskStats stats;
};

SearchResult coarse_path(const Evaluator& eval, const InitialGuess& guess, const TuneConfig& cfg) {
  double ki_start = guess.ki * cfg.coarse_step;
  SearchResult total;
  for (int attempt = 0; attempt <= cfg.start_retries; ++attempt) {
    SearchResult r = path_search(eval, guess.kp, ki_start, cfg.coarse_step, cfg);
    total.evaluations += r.evaluations;
    total.iterations += r.iterations;
    if (r.found) {
      total.found = true;
      total.point = r.point;
      return total;
    }
    ki_start *= cfg.coarse_step;
  }
  return total;
}

// Coarse pass, optional area search and fine pass on one evaluator.
bool search_gains(const Evaluator& eval, const InitialGuess& guess, double t_avg,
                  const TuneConfig& cfg, PassResult& out) {
  const SearchResult coarse = coarse_path(eval, guess, cfg);
  out.stats.evaluations += coarse.evaluations;
  if (!coarse.found) return false;
  SearchPoint best = coarse.point;
  out.stats.indicator = convexity_indicator(best.eval.rise_time, t_avg, cfg);
  if (out.stats.indicator >= 1.0) {
    out.stats.area_used = true;
    best = area_search(eval, best, guess.ki, cfg.coarse_step, &out.stats.evaluations);
  }
  const SearchResult fine = path_search(eval, 1.05 * best.kp, 0.95 * best.ki, cfg.fine_step, cfg);
  out.stats.evaluations += fine.evaluations;
  if (fine.found && fine.point.eval.rise_time <= best.eval.rise_time) {
    out.stats.fine_improved = fine.point.eval.rise_time < best.eval.rise_time;
    best = fine.point;
  }
  out.point = best;
  return true;
}

}  // namespace

CpEntry tune_mask(const DerSet& set, Mask mask, const TuneConfig& cfg, MaskStats* stats) {
  cfg.validate();
  const LoopEvaluator ev(aggregate_plant(set, mask), cfg);
  const InitialGuess guess = initial_guess(ev);
  PassResult pass;
  if (!search_gains(as_evaluator(ev), guess, average_time(set, mask), cfg, pass))
    throw InfeasibleError("no feasible gains for mask " + std::to_string(mask), {mask});
  CpEntry e;
  e.mask = mask;
  e.kp = pass.point.kp;
  e.ki = pass.point.ki;
  e.rise_time = pass.point.eval.rise_time;
  e.disk_margin = pass.point.eval.disk_margin;
  e.overshoot = pass.point.eval.overshoot;
  const WResult w = find_w(set, mask, e.kp, e.ki, cfg);
  e.w = w.w;
  e.w_floored = std::any_of(w.floored.begin(), w.floored.end(), [](bool b) { return b; });
  if (stats) *stats = pass.stats;
  return e;
}

CpTable tune_masks(const DerSet& set, const std::vector<Mask>& masks, const TuneConfig& cfg,
                   const Progress& progress) {
  cfg.validate();
  if (masks.empty()) throw ArgumentError("no masks to tune");
  for (Mask m : masks) set.active(m);  // range check
  std::vector<CpEntry> slots(masks.size());
  std::vector<char> ok(masks.size(), 0);
  std::mutex progress_mutex;
  std::size_t done = 0;
  // Expensive (slow, many-DER) masks first for better load balance.
  std::vector<std::size_t> order(masks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return average_time(set, masks[a]) > average_time(set, masks[b]);
  });
  parallel_for(
      masks.size(),
      [&](std::size_t k) {
        const std::size_t i = order[k];
        try {
          slots[i] = tune_mask(set, masks[i], cfg);
          ok[i] = 1;
        } catch (const InfeasibleError&) {
        }
        if (progress) {
          std::lock_guard lock(progress_mutex);
          progress(++done, masks.size());
        }
      },
      cfg.threads);
  CpTable table;
  table.der_count = set.size();
  table.der_hash = set.hash();
  table.config = cfg;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (ok[i]) table.entries[masks[i]] = slots[i];
    else table.failed.push_back(masks[i]);
  }
  return table;
}

CpTable tune_all(const DerSet& set, const TuneConfig& cfg, const Progress& progress) {
  return tune_masks(set, enumerate_combos(set.size()), cfg, progress);
}

bool CpTable::complete() const {
  return failed.empty() && der_count > 0 && entries.size() == (std::size_t{1} << der_count) - 1;
}

const CpEntry& CpTable::at(Mask mask) const {
  const auto it = entries.find(mask);
  if (it == entries.end()) throw ConfigError("mask " + std::to_string(mask) + " missing from CP table");
  return it->second;
}

// ---------------------------------------------------------------------------

namespace {

// Conjunction over an active set of masks. Cheap grid checks run first with
// move-to-front of the last violator; simulations run slowest mask first.
class ConjunctionEvaluator {
 public:
  ConjunctionEvaluator(const std::vector<const LoopEvaluator*>& evs) : evs_(evs) {
    std::stable_sort(evs_.begin(), evs_.end(),
                     [](const LoopEvaluator* a, const LoopEvaluator* b) { return a->time_scale() > b->time_scale(); });
    grid_order_ = evs_;
  }

  Evaluation operator()(double kp, double ki, double cutoff) {
    for (std::size_t i = 0; i < grid_order_.size(); ++i) {
      if (!grid_order_[i]->passes_grid_disk(kp, ki)) {
        std::rotate(grid_order_.begin(), grid_order_.begin() + static_cast<std::ptrdiff_t>(i),
                    grid_order_.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        return {};
      }
    }
    Evaluation agg;
    agg.feasible = true;
    agg.rise_time = 0.0;
    agg.disk_margin = kInf;
    agg.overshoot = 0.0;
    for (const auto* ev : evs_) {
      const Evaluation e = (*ev)(kp, ki, cutoff);
      if (!e.feasible) return e;
      agg.rise_time = std::max(agg.rise_time, e.rise_time);
      agg.disk_margin = std::min(agg.disk_margin, e.disk_margin);
      agg.overshoot = std::max(agg.overshoot, e.overshoot);
    }
    return agg;
  }

 private:
  std::vector<const LoopEvaluator*> evs_;
  std::vector<const LoopEvaluator*> grid_order_;
};

}  // namespace

StaticResult tune_static(const DerSet& set, const TuneConfig& cfg, const Progress& progress) {
  cfg.validate();
  const auto masks = enumerate_combos(set.size());
  std::vector<std::unique_ptr<LoopEvaluator>> evs(masks.size());
  parallel_for(
      masks.size(), [&](std::size_t i) { evs[i] = std::make_unique<LoopEvaluator>(aggregate_plant(set, masks[i]), cfg); },
      cfg.threads);

  // Start with the full set and every single DER: the strongest and the
  // weakest loops.
  std::vector<std::size_t> active{masks.size() - 1};
  for (std::size_t i = 0; i < set.size(); ++i) active.push_back((std::size_t{1} << i) - 1);

  const LoopEvaluator& full = *evs.back();
  StaticResult result;
  for (std::size_t round = 1; round <= 30; ++round) {
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    std::vector<const LoopEvaluator*> act;
    for (auto i : active) act.push_back(evs[i].get());
    ConjunctionEvaluator conj(act);
    Evaluator eval = [&conj](double kp, double ki, double cutoff) { return conj(kp, ki, cutoff); };

    const InitialGuess guess = [&] {
      const auto& grid = FrequencyGrid::standard().omega;
      const LoopModel unit(DelayTf::gain(1.0), DelayTf::pure_delay(cfg.t_com), full.branches(),
                           DelayTf::pure_delay(cfg.t_meas));
      auto plant = [&](double w) {
        const auto it = std::lower_bound(grid.begin(), grid.end(), w);
        if (it != grid.end() && *it == w) return full.plant_samples()[static_cast<std::size_t>(it - grid.begin())];
        return loop_transfer(unit, w);
      };
      return initial_guess(plant, full.time_scale(), eval);
    }();

    // Indicator on the slowest active mask (largest power-weighted time).
    double t_avg = 0.0;
    for (auto i : active) t_avg = std::max(t_avg, average_time(set, masks[i]));
    PassResult pass;
    if (!search_gains(eval, guess, t_avg, cfg, pass)) {
      std::vector<Mask> offending;
      for (auto i : active) offending.push_back(masks[i]);
      throw InfeasibleError("no static gains satisfy all active masks", offending);
    }

    // Verify on every mask.
    std::vector<Evaluation> checks(masks.size());
    std::size_t done = 0;
    std::mutex m;
    parallel_for(
        masks.size(),
        [&](std::size_t i) {
          checks[i] = (*evs[i])(pass.point.kp, pass.point.ki);
          if (progress) {
            std::lock_guard lock(m);
            progress(++done, masks.size());
          }
        },
        cfg.threads);
    std::vector<std::size_t> violators;
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (!checks[i].feasible) violators.push_back(i);
    // Only the worst violators join the active set: lowest grid margin,
    // then largest overshoot. Neighbouring masks tend to fail together.
    std::vector<std::pair<double, double>> severity(masks.size());
    for (auto i : violators) {
      const double dm = std::min(evs[i]->grid_margin(pass.point.kp, pass.point.ki), cfg.disk_threshold);
      severity[i] = {dm, -checks[i].overshoot};
    }
    std::stable_sort(violators.begin(), violators.end(),
                     [&](std::size_t a, std::size_t b) { return severity[a] < severity[b]; });
    if (violators.size() > kStaticBatch) violators.resize(kStaticBatch);

    result.kp = pass.point.kp;
    result.ki = pass.point.ki;
    result.rounds = round;
    if (violators.empty()) {
      result.rise_time = 0.0;
      for (std::size_t i = 0; i < masks.size(); ++i) {
        if (checks[i].rise_time > result.rise_time) {
          result.rise_time = checks[i].rise_time;
          result.slowest_mask = masks[i];
        }
      }
      for (auto i : active) result.active_set.push_back(masks[i]);
      return result;
    }
    active.insert(active.end(), violators.begin(), violators.end());
  }
  std::vector<Mask> offending;
  for (auto i : active) offending.push_back(masks[i]);
  throw InfeasibleError("static search did not converge on a pair feasible for all masks", offending);
}

// ---------------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

double read_number(const ojson& obj, const std::string& key, const std::string& origin, const std::string& path,
                   bool null_is_inf = false) {
  if (!obj.contains(key)) throw ParseError(origin, path + "." + key, "missing");
  const auto& v = obj[key];
  if (v.is_null() && null_is_inf) return kInf;
  if (!v.is_number()) throw ParseError(origin, path + "." + key, "expected a number");
  return v.get<double>();
}

ojson config_json(const TuneConfig& cfg) {
  ojson j;
  j["disk_threshold"] = cfg.disk_threshold;
  j["overshoot_threshold"] = cfg.overshoot_threshold;
  j["coarse_step"] = cfg.coarse_step;
  j["fine_step"] = cfg.fine_step;
  j["es_limit"] = cfg.es_limit;
  j["w_step_fraction"] = cfg.w_step_fraction;
  j["t_com_s"] = cfg.t_com;
  j["t_meas_s"] = cfg.t_meas;
  return j;
}

TuneConfig config_from(const ojson& meta, const std::string& origin) {
  TuneConfig cfg;
  const std::string p = "metadata";
  if (meta.contains("disk_threshold")) cfg.disk_threshold = read_number(meta, "disk_threshold", origin, p);
  if (meta.contains("overshoot_threshold")) cfg.overshoot_threshold = read_number(meta, "overshoot_threshold", origin, p);
  if (meta.contains("coarse_step")) cfg.coarse_step = read_number(meta, "coarse_step", origin, p);
  if (meta.contains("fine_step")) cfg.fine_step = read_number(meta, "fine_step", origin, p);
  if (meta.contains("es_limit")) cfg.es_limit = static_cast<int>(read_number(meta, "es_limit", origin, p));
  if (meta.contains("w_step_fraction")) cfg.w_step_fraction = read_number(meta, "w_step_fraction", origin, p);
  if (meta.contains("t_com_s")) cfg.t_com = read_number(meta, "t_com_s", origin, p);
  if (meta.contains("t_meas_s")) cfg.t_meas = read_number(meta, "t_meas_s", origin, p);
  try {
    cfg.validate();
  } catch (const ArgumentError& e) {
    throw ParseError(origin, "metadata", e.what());
  }
  return cfg;
}

}  // namespace

std::string cp_table_to_json(const CpTable& table, bool timestamp) {
  ojson doc;
  ojson meta;
  meta["tool"] = "cpfc";
  meta["format"] = 1;
  meta["der_count"] = table.der_count;
  meta["der_hash"] = table.der_hash;
  const ojson cfg = config_json(table.config);
  for (const auto& [k, v] : cfg.items()) meta[k] = v;
  meta["complete"] = table.complete();
  meta["failed_masks"] = table.failed;
  if (timestamp) meta["created"] = utc_timestamp();
  doc["metadata"] = meta;
  for (const auto& [mask, e] : table.entries) {
    ojson j;
    j["kp"] = e.kp;
    j["ki"] = e.ki;
    j["w"] = e.w;
    j["rise_time"] = number_or_null(e.rise_time);
    j["disk_margin"] = number_or_null(e.disk_margin);
    j["overshoot"] = number_or_null(e.overshoot);
    j["w_floored"] = e.w_floored;
    doc[std::to_string(mask)] = j;
  }
  return doc.dump(1) + "\n";
}

CpTable cp_table_from_json(const std::string& text, const std::string& origin) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw ParseError(origin, "<document>", e.what());
  }
  if (!doc.is_object()) throw ParseError(origin, "<document>", "expected an object");
  CpTable table;
  if (doc.contains("metadata")) {
    const auto& meta = doc["metadata"];
    if (!meta.is_object()) throw ParseError(origin, "metadata", "expected an object");
    table.config = config_from(meta, origin);
    if (meta.contains("der_count")) table.der_count = static_cast<std::size_t>(read_number(meta, "der_count", origin, "metadata"));
    if (meta.contains("der_hash") && meta["der_hash"].is_string()) table.der_hash = meta["der_hash"].get<std::string>();
    if (meta.contains("failed_masks") && meta["failed_masks"].is_array())
      for (const auto& m : meta["failed_masks"]) table.failed.push_back(m.get<Mask>());
  }
  for (const auto& [key, val] : doc.items()) {
    if (key == "metadata") continue;
    Mask mask = 0;
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(key, &used);
      if (used != key.size() || v == 0 || v > 0xFFFFFFul) throw std::invalid_argument("range");
      mask = static_cast<Mask>(v);
    } catch (const std::exception&) {
      throw ParseError(origin, key, "entry key must be a positive decimal mask");
    }
    if (!val.is_object()) throw ParseError(origin, key, "expected an object");
    CpEntry e;
    e.mask = mask;
    e.kp = read_number(val, "kp", origin, key);
    e.ki = read_number(val, "ki", origin, key);
    if (!(e.kp >= 0.0) || !(e.ki > 0.0)) throw ParseError(origin, key + ".ki", "gains must satisfy kp >= 0, ki > 0");
    if (!val.contains("w") || !val["w"].is_array()) throw ParseError(origin, key + ".w", "expected an array");
    for (const auto& w : val["w"]) {
      if (!w.is_number()) throw ParseError(origin, key + ".w", "expected numbers");
      const double x = w.get<double>();
      if (!(x > 0.0 && x <= 1.0)) throw ParseError(origin, key + ".w", "factors must lie in (0, 1]");
      e.w.push_back(x);
    }
    if (e.w.size() != static_cast<std::size_t>(std::popcount(mask)))
      throw ParseError(origin, key + ".w", "needs one factor per active DER");
    e.rise_time = val.contains("rise_time") ? read_number(val, "rise_time", origin, key, true) : kInf;
    e.disk_margin = val.contains("disk_margin") ? read_number(val, "disk_margin", origin, key, true) : kInf;
    e.overshoot = val.contains("overshoot") ? read_number(val, "overshoot", origin, key, true) : kInf;
    if (val.contains("w_floored") && val["w_floored"].is_boolean()) e.w_floored = val["w_floored"].get<bool>();
    table.entries[mask] = std::move(e);
  }
  if (table.der_count == 0) {
    Mask all = 0;
    for (const auto& [m, e] : table.entries) all |= m;
    table.der_count = static_cast<std::size_t>(std::bit_width(all));
  }
  return table;
}

void save_cp_table(const CpTable& table, const std::string& path, bool timestamp) {
  write_text_file(path, cp_table_to_json(table, timestamp));
}

CpTable load_cp_table(const std::string& path) { return cp_table_from_json(read_text_file(path), path); }

std::string static_to_json(const StaticResult& r, const DerSet& set, const TuneConfig& cfg, bool timestamp) {
  ojson doc;
  doc["kp"] = r.kp;
  doc["ki"] = r.ki;
  doc["rise_time"] = number_or_null(r.rise_time);
  doc["slowest_mask"] = r.slowest_mask;
  doc["active_set"] = r.active_set;
  doc["rounds"] = r.rounds;
  ojson meta;
  meta["tool"] = "cpfc";
  meta["format"] = 1;
  meta["der_count"] = set.size();
  meta["der_hash"] = set.hash();
  const ojson cfg_doc = config_json(cfg);
  for (const auto& [k, v] : cfg_doc.items()) meta[k] = v;
  if (timestamp) meta["created"] = utc_timestamp();
  doc["metadata"] = meta;
  return doc.dump(1) + "\n";
}

StaticResult static_from_json(const std::string& text, const std::string& origin) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw ParseError(origin, "<document>", e.what());
  }
  if (!doc.is_object()) throw ParseError(origin, "<document>", "expected an object");
  StaticResult r;
  r.kp = read_number(doc, "kp", origin, "$");
  r.ki = read_number(doc, "ki", origin, "$");
  if (!(r.kp >= 0.0) || !(r.ki > 0.0)) throw ParseError(origin, "ki", "gains must satisfy kp >= 0, ki > 0");
  if (doc.contains("rise_time")) r.rise_time = read_number(doc, "rise_time", origin, "$", true);
  if (doc.contains("slowest_mask") && doc["slowest_mask"].is_number()) r.slowest_mask = doc["slowest_mask"].get<Mask>();
  if (doc.contains("active_set") && doc["active_set"].is_array())
    for (const auto& m : doc["active_set"]) r.active_set.push_back(m.get<Mask>());
  if (doc.contains("rounds") && doc["rounds"].is_number()) r.rounds = doc["rounds"].get<std::size_t>();
  return r;
}

}  // namespace cpfc
