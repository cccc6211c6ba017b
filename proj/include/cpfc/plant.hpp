#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cpfc/lti.hpp"

namespace cpfc {

using Mask = std::uint32_t;

enum class DerKind { WT, CHP, PV };
enum class ModelType { PT1, PT2, RHPZ };

std::string to_string(DerKind kind);
std::string to_string(ModelType model);
DerKind parse_der_kind(const std::string& text);
ModelType parse_model_type(const std::string& text);

struct DerSpec {
  std::string name;
  DerKind kind = DerKind::WT;
  double p_inst = 0.0;   // W
  double t_delay = 0.0;  // s
  double t_rise = 0.0;   // s, 10-90 %
  std::optional<double> c_d;  // participation, defaults to p_inst
  /// Piecewise-constant schedule (time s, power W); value before the first
  /// entry is 0.
  std::vector<std::pair<double, double>> schedule;

  double participation() const { return c_d.value_or(p_inst); }
  double schedule_at(double t) const;
  void validate() const;
};

/// Ordered DER list. Bit i of a mask refers to specs()[i].
class DerSet {
 public:
  explicit DerSet(std::vector<DerSpec> specs);

  const std::vector<DerSpec>& specs() const { return specs_; }
  std::size_t size() const { return specs_.size(); }
  const DerSpec& operator[](std::size_t i) const { return specs_[i]; }
  Mask full_mask() const;
  std::vector<std::size_t> active(Mask mask) const;
  /// FNV-1a over the table contents, hex encoded.
  std::string hash() const;

 private:
  std::vector<DerSpec> specs_;
};

/// The eleven-DER reference fleet (6 WT, 3 CHP, 2 PV).
DerSet reference_fleet();

inline constexpr double kRiseFactor = 2.197;  // ln 9
inline constexpr double kDefaultTcom = 0.1;
inline constexpr double kDefaultTmeas = 0.1;

double time_constant(double t_rise);

DelayTf build_der_tf(const DerSpec& spec, double w = 1.0, double b = 1.0,
                     ModelType model = ModelType::PT1);

/// One branch per active DER; w has one entry per set bit (empty = all 1).
std::vector<DelayTf> aggregate_plant(const DerSet& set, Mask mask,
                                     const std::vector<double>& w = {}, double b = 1.0,
                                     ModelType model = ModelType::PT1);

LoopModel build_loop(double kp, double ki, std::vector<DelayTf> branches,
                     double t_com = kDefaultTcom, double t_meas = kDefaultTmeas);

/// All nonzero masks over m DERs in ascending order.
std::vector<Mask> enumerate_combos(std::size_t m);

/// Power-weighted mean of (t_delay + t_rise) over the active DERs.
double average_time(const DerSet& set, Mask mask);

/// DER table from CSV (name,kind,p_inst_w,t_delay_s,t_rise_s) or JSON,
/// chosen by extension.
DerSet load_der_table(const std::string& path);
DerSet parse_der_csv(const std::string& text, const std::string& origin = "<csv>");
DerSet parse_der_json(const std::string& text, const std::string& origin = "<json>");
void save_der_csv(const DerSet& set, const std::string& path);

}  // namespace cpfc
