#pragma once

#include "cpfc/plant.hpp"

namespace fleets {

inline cpfc::DerSpec spec(const char* name, cpfc::DerKind kind, double p, double delay, double rise) {
  cpfc::DerSpec s;
  s.name = name;
  s.kind = kind;
  s.p_inst = p;
  s.t_delay = delay;
  s.t_rise = rise;
  return s;
}

// Two WTs and a PV: small enough to tune every mask in a unit test.
inline cpfc::DerSet small() {
  using cpfc::DerKind;
  return cpfc::DerSet({spec("W1", DerKind::WT, 2.0e6, 0.01, 0.515), spec("W2", DerKind::WT, 1.7e6, 0.01, 0.515),
                       spec("P1", DerKind::PV, 0.195e6, 0.01, 0.1)});
}

}  // namespace fleets
