#include "cpfc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include "cpfc/analysis.hpp"
#include "cpfc/errors.hpp"
#include "cpfc/io.hpp"
#include "cpfc/parallel.hpp"
#include "cpfc/sim.hpp"
#include "cpfc/tuner.hpp"

namespace cpfc {

namespace {

struct Options {
  std::string ders;
  std::string out;
  std::string cp;
  std::string static_path;
  std::string out_dir;
  std::string scenario;
  std::string model = "pt1";
  Mask mask = 0;
  double kp = 0.0;
  double ki = 0.0;
  std::size_t threads = 0;
  bool no_timestamp = false;
  bool quiet = false;
  TuneConfig cfg;
};

Progress progress_printer(std::ostream& err, const char* what, bool quiet) {
  if (quiet) return {};
  auto last = std::make_shared<std::size_t>(0);
  return [&err, what, last](std::size_t done, std::size_t total) {
    const std::size_t pct = total ? done * 100 / total : 100;
    if (pct >= *last + 10 || done == total) {
      *last = pct;
      err << what << ' ' << done << '/' << total << '\n';
    }
  };
}

CpTable load_checked_table(const std::string& path, const DerSet& set) {
  CpTable table = load_cp_table(path);
  if (table.der_count != set.size())
    throw ConfigError(path + ": table covers " + std::to_string(table.der_count) + " DERs, DER file has " +
                      std::to_string(set.size()));
  if (!table.der_hash.empty() && table.der_hash != set.hash())
    throw ConfigError(path + ": table was tuned for a different DER set");
  if (!table.complete()) throw ConfigError(path + ": table is incomplete");
  return table;
}

void print_margins(std::ostream& out, const MarginReport& m, const StepMetrics& sm) {
  out << "disk_margin " << format_number(m.disk_margin) << '\n'
      << "gain_margin " << format_number(m.gain_margin) << '\n'
      << "phase_margin_deg " << format_number(m.phase_margin) << '\n'
      << "delay_margin_s " << format_number(m.delay_margin) << '\n'
      << "stable " << (sm.stable ? "yes" : "no") << '\n'
      << "overshoot_pct " << format_number(sm.overshoot) << '\n'
      << "rise_time_s " << format_number(sm.rise_time) << '\n'
      << "settling_time_s " << format_number(sm.settling_time) << '\n';
}

void print_sweep_summary(std::ostream& out, const char* label, const std::vector<SweepRow>& rows) {
  std::vector<double> rise, settle;
  std::size_t unstable = 0;
  for (const auto& r : rows) {
    if (!r.stable) {
      ++unstable;
      continue;
    }
    rise.push_back(r.rise_time);
    settle.push_back(r.settling_time);
  }
  out << label << ": masks " << rows.size() << ", unstable " << unstable;
  if (!rise.empty())
    out << ", median rise " << format_number(median(rise)) << " s, median settling " << format_number(median(settle))
        << " s";
  out << '\n';
}

int cmd_tune(const Options& o, std::ostream& out, std::ostream& err) {
  const DerSet set = load_der_table(o.ders);
  const CpTable table = tune_all(set, o.cfg, progress_printer(err, "tuned", o.quiet));
  save_cp_table(table, o.out, !o.no_timestamp);
  out << "wrote " << table.entries.size() << " entries to " << o.out << '\n';
  if (!table.failed.empty()) {
    err << "no feasible gains for " << table.failed.size() << " mask(s):";
    for (Mask m : table.failed) err << ' ' << m;
    err << '\n';
    return kExitInfeasible;
  }
  return kExitOk;
}

int cmd_tune_static(const Options& o, std::ostream& out, std::ostream& err) {
  const DerSet set = load_der_table(o.ders);
  const StaticResult r = tune_static(set, o.cfg, progress_printer(err, "verified", o.quiet));
  write_text_file(o.out, static_to_json(r, set, o.cfg, !o.no_timestamp));
  out << "kp " << format_number(r.kp) << "\nki " << format_number(r.ki) << "\nrise_time_s "
      << format_number(r.rise_time) << "\nslowest_mask " << r.slowest_mask << '\n';
  return kExitOk;
}

int cmd_analyze(const Options& o, std::ostream& out, std::ostream&) {
  const DerSet set = load_der_table(o.ders);
  const CpTable table = load_checked_table(o.cp, set);
  std::optional<StaticResult> st;
  if (!o.static_path.empty()) st = static_from_json(read_text_file(o.static_path), o.static_path);
  std::filesystem::create_directories(o.out_dir);
  const std::filesystem::path dir(o.out_dir);

  const auto adaptive = robustness_sweep(set, table, o.threads);
  write_text_file((dir / "sweep_adaptive.csv").string(), sweep_to_csv(adaptive));
  print_sweep_summary(out, "adaptive", adaptive);
  if (st) {
    const auto fixed = robustness_sweep(set, st->kp, st->ki, table.config.t_com, table.config.t_meas, o.threads);
    write_text_file((dir / "sweep_static.csv").string(), sweep_to_csv(fixed));
    print_sweep_summary(out, "static", fixed);
  }
  return kExitOk;
}

int cmd_uncertainty(const Options& o, std::ostream& out, std::ostream&) {
  const DerSet set = load_der_table(o.ders);
  const CpTable table = load_checked_table(o.cp, set);
  UncertaintyOptions uo;
  uo.threads = o.threads;
  const UncertaintyResult r = uncertainty_sweep(set, table, parse_model_type(o.model), uo);
  write_text_file(o.out, uncertainty_to_csv(r));
  out << "b_min_unstable " << format_number(r.b_min_unstable) << "\nb_max_unstable " << format_number(r.b_max_unstable)
      << '\n';
  return kExitOk;
}

int cmd_simulate(const Options& o, std::ostream& out, std::ostream&) {
  const DerSet set = load_der_table(o.ders);
  const CpTable table = load_checked_table(o.cp, set);
  const Scenario sc = load_scenario(o.scenario, set);
  const Trace tr = run_scenario(sc, set, table);
  save_trace_csv(tr, o.out);
  out << "wrote " << tr.size() << " samples to " << o.out << '\n';
  return kExitOk;
}

int cmd_margins(const Options& o, std::ostream& out, std::ostream&) {
  const DerSet set = load_der_table(o.ders);
  if (o.mask == 0 || o.mask > set.full_mask()) throw ArgumentError("mask must be in [1, " + std::to_string(set.full_mask()) + "]");
  if (!(o.kp > 0.0) || !(o.ki > 0.0)) throw ArgumentError("kp and ki must be > 0");
  const LoopModel loop = build_loop(o.kp, o.ki, aggregate_plant(set, o.mask), o.cfg.t_com, o.cfg.t_meas);
  SimOptions so;
  so.abort_magnitude = 10.0;
  print_margins(out, classical_margins(loop), step_metrics(simulate_closed_loop_step(loop, 1.0, so), 1.0));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Gain-schedule tuning and analysis for cross-voltage-level power flow control", "cpfc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cpfc 1.0");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--ders", o.ders, "DER table (.csv or .json)")->required();
    sub->add_option("--threads", o.threads, "worker threads (default: hardware or ADN_CPFC_THREADS)");
    sub->add_option("--t-com", o.cfg.t_com, "communication delay (s)");
    sub->add_option("--t-meas", o.cfg.t_meas, "measurement delay (s)");
  };
  auto add_tuning = [&](CLI::App* sub) {
    sub->add_option("--disk", o.cfg.disk_threshold, "minimum disk margin");
    sub->add_option("--overshoot", o.cfg.overshoot_threshold, "overshoot bound (fraction)");
    sub->add_option("--coarse", o.cfg.coarse_step, "coarse relative step");
    sub->add_option("--fine", o.cfg.fine_step, "fine relative step");
    sub->add_flag("--no-timestamp", o.no_timestamp, "omit the creation time from the JSON metadata");
    sub->add_flag("-q,--quiet", o.quiet, "no progress output");
  };

  auto* tune = app.add_subcommand("tune", "tune the gain schedule for every DER combination");
  add_common(tune);
  add_tuning(tune);
  tune->add_option("--out", o.out, "output CP.json")->required();

  auto* tstatic = app.add_subcommand("tune-static", "tune one PI pair feasible for every combination");
  add_common(tstatic);
  add_tuning(tstatic);
  tstatic->add_option("--out", o.out, "output static.json")->required();

  auto* analyze = app.add_subcommand("analyze", "margins and step metrics of every combination");
  add_common(analyze);
  analyze->add_option("--cp", o.cp, "gain schedule CP.json")->required();
  analyze->add_option("--static", o.static_path, "static pair from tune-static");
  analyze->add_option("--out-dir", o.out_dir, "output directory")->required();

  auto* unc = app.add_subcommand("uncertainty", "sweep the DER time-constant factor b");
  add_common(unc);
  unc->add_option("--cp", o.cp, "gain schedule CP.json")->required();
  unc->add_option("--model", o.model, "DER model family")
      ->check(CLI::IsMember({"pt1", "pt2", "rhpz"}, CLI::ignore_case));
  unc->add_option("--out", o.out, "output CSV")->required();

  auto* sim = app.add_subcommand("simulate", "run a scenario under the gain schedule");
  add_common(sim);
  sim->add_option("--cp", o.cp, "gain schedule CP.json")->required();
  sim->add_option("--scenario", o.scenario, "scenario JSON")->required();
  sim->add_option("--out", o.out, "output trace CSV")->required();

  auto* margins = app.add_subcommand("margins", "margins of one combination under given gains");
  add_common(margins);
  margins->add_option("--mask", o.mask, "availability mask")->required();
  margins->add_option("--kp", o.kp, "proportional gain")->required();
  margins->add_option("--ki", o.ki, "integral gain")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    o.cfg.threads = o.threads;
    o.cfg.validate();
    if (tune->parsed()) return cmd_tune(o, out, err);
    if (tstatic->parsed()) return cmd_tune_static(o, out, err);
    if (analyze->parsed()) return cmd_analyze(o, out, err);
    if (unc->parsed()) return cmd_uncertainty(o, out, err);
    if (sim->parsed()) return cmd_simulate(o, out, err);
    return cmd_margins(o, out, err);
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
}

}  // namespace cpfc
