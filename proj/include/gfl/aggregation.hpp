#pragma once

#include <vector>

#include "gfl/functionals.hpp"
#include "gfl/trajectory.hpp"

namespace gfl {

struct IntegrateOptions {
  // Diagnostics every `record_every` steps (first and last always included).
  int record_every = 1;
  // Velocity snapshots every `state_every` steps; 0 keeps endpoints only.
  int state_every = 0;
  int threads = 1;
};

// Right-hand side of the pairwise attraction flow
//   dv_i/dt = -(1-e)/(2n) sum_j |v_i - v_j| (v_i - v_j).
// The pair loop is antisymmetric, so total momentum is conserved exactly in
// exact arithmetic and to round-off here.
std::vector<double> aggregation_rhs(const std::vector<double>& v,
                                    const Restitution& e, int threads = 1);

// Classical RK4 with a fixed step (plus one shorter final step when T is not
// a multiple of dt).  The returned trajectory realizes the gradient-flow
// flux, so its diagnostics carry finite action values.
Trajectory integrate(const ParticleState& initial, const Restitution& e,
                     double T, double dt, const IntegrateOptions& opts = {});

// The flux the flow realizes: U_ij = v_i - v_j on the atoms of f.
PairFlux gradient_flow_flux(const DiscreteMeasure& f);

}  // namespace gfl
