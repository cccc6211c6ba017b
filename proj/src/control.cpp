#include "cpfc/control.hpp"

#include <algorithm>
#include <cmath>

#include "cpfc/errors.hpp"

namespace cpfc {

Mask availability_mask(const Availability& avail) {
  if (avail.size() > 24) throw ArgumentError("at most 24 DERs");
  Mask m = 0;
  for (std::size_t i = 0; i < avail.size(); ++i)
    if (avail[i]) m |= Mask{1} << i;
  return m;
}

Availability availability_from_mask(Mask mask, std::size_t der_count) {
  if (der_count > 24 || (der_count < 32 && (mask >> der_count) != 0))
    throw ArgumentError("mask has bits beyond the DER count");
  Availability a(der_count);
  for (std::size_t i = 0; i < der_count; ++i) a[i] = (mask >> i) & 1u;
  return a;
}

std::optional<CpEntry> select_params(const CpTable& table, Mask mask) {
  if (mask == 0) return std::nullopt;
  return table.at(mask);
}

std::optional<CpEntry> select_params(const CpTable& table, const Availability& avail) {
  return select_params(table, availability_mask(avail));
}

double integrator_reset(double x_i, double ki_old, double ki_new) {
  if (!(ki_old > 0.0) || !(ki_new > 0.0)) throw ArgumentError("integral gains must be > 0");
  if (ki_old == ki_new) return x_i;
  return x_i * ki_old / ki_new;
}

double pi_step(double p_err, PiState& state, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("dt must be > 0");
  state.x_i += p_err * dt;
  return state.kp_active * p_err + state.ki_active * state.x_i;
}

std::vector<double> dispatch_setpoints(double p_y, const DerSet& set, Mask avail, double t,
                                       const std::vector<double>& w, bool saturate) {
  if (!std::isfinite(p_y)) throw ArgumentError("p_y must be finite");
  if (!w.empty() && w.size() != set.size()) throw ArgumentError("w needs one factor per DER");
  std::vector<double> sp(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set[i];
    double v = s.schedule_at(t);
    if (avail & (Mask{1} << i)) v += p_y * (w.empty() ? 1.0 : w[i]) * s.participation();
    if (saturate) v = std::clamp(v, -s.p_inst, s.p_inst);
    sp[i] = v;
  }
  return sp;
}

GainScheduledController::GainScheduledController(const CpTable& table)
    : table_(&table), w_(table.der_count, 1.0) {}

bool GainScheduledController::set_availability(Mask mask) {
  mask_ = mask;
  const auto entry = select_params(*table_, mask);
  if (!entry) return false;  // hold: gains and integrator stay as they are
  std::fill(w_.begin(), w_.end(), 1.0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < w_.size(); ++i)
    if (mask & (Mask{1} << i)) w_[i] = entry->w.at(j++);
  bool reset = false;
  if (configured_ && entry->ki != state_.ki_active) {
    state_.x_i = integrator_reset(state_.x_i, state_.ki_active, entry->ki);
    reset = true;
  }
  state_.ki_prev = configured_ ? state_.ki_active : entry->ki;
  state_.kp_active = entry->kp;
  state_.ki_active = entry->ki;
  configured_ = true;
  return reset;
}

double GainScheduledController::step(double p_err, double dt) {
  if (mask_ == 0 || !configured_) return p_y_;
  p_y_ = pi_step(p_err, state_, dt);
  return p_y_;
}

}  // namespace cpfc
