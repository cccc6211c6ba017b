#pragma once

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cpfc/metrics.hpp"
#include "cpfc/plant.hpp"

namespace cpfc {

struct TuneConfig {
  double disk_threshold = 1.5;
  double overshoot_threshold = 0.01;  // fraction
  double coarse_step = 0.01;
  double fine_step = 0.001;
  int es_limit = 20;
  double w_step_fraction = 0.001;
  double w_floor = 0.01;
  double t_com = kDefaultTcom;
  double t_meas = kDefaultTmeas;
  std::size_t max_iterations = 100000;
  /// Retries of the coarse path with ki_start scaled down again by the step.
  int start_retries = 3;
  std::size_t threads = 0;  // 0 = default_thread_count()

  Thresholds thresholds() const { return {disk_threshold, overshoot_threshold}; }
  /// Throws ArgumentError on inconsistent values.
  void validate() const;
};

struct Evaluation {
  bool feasible = false;
  double rise_time = std::numeric_limits<double>::infinity();
  double disk_margin = 0.0;
  double overshoot = std::numeric_limits<double>::infinity();  // percent
};

/// (kp, ki, rise_cutoff) -> evaluation. Points whose rise time provably
/// exceeds rise_cutoff may be reported infeasible.
using Evaluator = std::function<Evaluation(double kp, double ki, double rise_cutoff)>;

/// Feasibility evaluation of the reference loop of one DER subset. The
/// return ratio without controller is precomputed on the standard grid so
/// that disk-margin violations are rejected before any simulation.
class LoopEvaluator {
 public:
  LoopEvaluator(std::vector<DelayTf> branches, const TuneConfig& cfg);

  Evaluation operator()(double kp, double ki,
                        double rise_cutoff = std::numeric_limits<double>::infinity()) const;
  /// False when the grid disk margin is already below the threshold.
  bool passes_grid_disk(double kp, double ki) const;
  /// Disk margin on the grid without refinement or stability check.
  double grid_margin(double kp, double ki) const;

  const std::vector<DelayTf>& branches() const { return branches_; }
  /// comm * sum(branches) * meas on the standard grid.
  const std::vector<Complex>& plant_samples() const { return plant_; }
  LoopModel loop(double kp, double ki) const;
  double time_scale() const { return time_scale_; }

 private:
  std::vector<DelayTf> branches_;
  TuneConfig cfg_;
  std::vector<Complex> plant_;
  std::vector<Complex> plant_over_jw_;
  double time_scale_ = 0.0;
};

struct InitialGuess {
  double kp = 0.0;
  double ki = 0.0;
  bool from_crossover = false;  // false: DC-gain fallback
  double ultimate_gain = 0.0;
  double ultimate_period = 0.0;
};

/// Aggressive starting point (frequency-response ultimate-gain rule,
/// kp doubled while still feasible).
InitialGuess initial_guess(const LoopEvaluator& ev);
/// Same rule on an arbitrary loop response without controller (plant
/// including comm and meas) and feasibility predicate. time_scale is used
/// for the integral gain of the DC-gain fallback.
InitialGuess initial_guess(const std::function<Complex(double)>& plant, double time_scale,
                           const Evaluator& eval);

struct SearchPoint {
  double kp = 0.0;
  double ki = 0.0;
  Evaluation eval;
};

struct SearchResult {
  bool found = false;
  SearchPoint point;
  std::size_t evaluations = 0;
  std::size_t iterations = 0;
};

/// Walk along the left edge of the feasible region starting at
/// (kp_start, ki_start): infeasible -> kp -= kp*step, feasible -> record and
/// ki += ki*step. Stops after es_limit consecutive kp reductions following
/// a feasible point, at the iteration cap, or when kp has shrunk below
/// 1e-6 of its start (reported as not found if nothing was recorded).
SearchResult path_search(const Evaluator& eval, double kp_start, double ki_start, double step,
                         const TuneConfig& cfg);

double convexity_indicator(double rise_path, double t_avg, const TuneConfig& cfg);
double convexity_indicator(const DerSet& set, Mask mask, double rise_path, const TuneConfig& cfg);

/// Scan kp in (0, kp_path] x ki in (ki_path, ki_init] on a multiplicative
/// grid; returns the minimum-rise feasible point or the path solution.
SearchPoint area_search(const Evaluator& eval, const SearchPoint& path, double ki_init, double step,
                        std::size_t* evaluations = nullptr);

struct WResult {
  std::vector<double> w;
  std::vector<bool> floored;
};

/// Per-DER scaling factors: each active DER alone in the loop with the
/// tuned gains; w lowered in steps of w_step_fraction until feasible.
WResult find_w(const DerSet& set, Mask mask, double kp, double ki, const TuneConfig& cfg);

struct CpEntry {
  Mask mask = 0;
  double kp = 0.0;
  double ki = 0.0;
  std::vector<double> w;  // per active DER, index order
  double rise_time = 0.0;
  double disk_margin = 0.0;
  double overshoot = 0.0;
  bool w_floored = false;
};

struct CpTable {
  std::size_t der_count = 0;
  std::string der_hash;
  TuneConfig config;
  std::map<Mask, CpEntry> entries;
  std::vector<Mask> failed;

  bool complete() const;
  /// Throws ConfigError when the mask is missing.
  const CpEntry& at(Mask mask) const;
};

struct MaskStats {
  std::size_t evaluations = 0;
  double indicator = 0.0;
  bool area_used = false;
  bool fine_improved = false;
};

/// Coarse pass, optional area search, fine pass and Find W for one subset.
/// Throws InfeasibleError when no feasible point exists.
CpEntry tune_mask(const DerSet& set, Mask mask, const TuneConfig& cfg, MaskStats* stats = nullptr);

using Progress = std::function<void(std::size_t done, std::size_t total)>;

/// Every nonzero mask; masks without a solution are listed in `failed`.
CpTable tune_all(const DerSet& set, const TuneConfig& cfg, const Progress& progress = {});
/// Subset of masks (must be non-empty, in range).
CpTable tune_masks(const DerSet& set, const std::vector<Mask>& masks, const TuneConfig& cfg,
                   const Progress& progress = {});

struct StaticResult {
  double kp = 0.0;
  double ki = 0.0;
  double rise_time = 0.0;  // worst over masks
  Mask slowest_mask = 0;
  std::vector<Mask> active_set;  // masks that constrained the search
  std::size_t rounds = 0;
};

/// One (kp, ki) pair feasible for every mask. The search runs on an active
/// set of masks; the result is verified on all masks and violators are
/// added to the active set until the verification passes.
StaticResult tune_static(const DerSet& set, const TuneConfig& cfg, const Progress& progress = {});

// CP table files ------------------------------------------------------------

std::string cp_table_to_json(const CpTable& table, bool timestamp = true);
CpTable cp_table_from_json(const std::string& text, const std::string& origin = "<cp>");
void save_cp_table(const CpTable& table, const std::string& path, bool timestamp = true);
CpTable load_cp_table(const std::string& path);

std::string static_to_json(const StaticResult& r, const DerSet& set, const TuneConfig& cfg,
                           bool timestamp = true);
StaticResult static_from_json(const std::string& text, const std::string& origin = "<static>");

}  // namespace cpfc
