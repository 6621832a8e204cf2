#pragma once

#include <cstdint>
#include <functional>
#include <utility>

#include "gfl/functionals.hpp"
#include "gfl/trajectory.hpp"

namespace gfl {

// Post-collision velocities of an inelastic pair, computed in midpoint/gap
// form: v' = c + (e/2)(v_* - v), v'_* = c - (e/2)(v_* - v), c = (v + v_*)/2.
// Momentum v' + v'_* = v + v_* and contraction v' - v'_* = -e (v - v_*) hold
// to round-off; the half-energy change is -(1-e^2)/4 |v - v_*|^2.
std::pair<double, double> collide(double v, double v_star, const Restitution& e);

struct DsmcOptions {
  int record_every = 1;
  int state_every = 0;
  // Called once per accepted collision with (v, v_star, v', v'_*).
  std::function<void(double, double, double, double)> on_collision;
};

// Stochastic pair-collision simulation with collision kernel |gap| per
// unordered pair at rate |gap|/n, via candidate draws against the majorant
// gap max(v) - min(v) (which never grows within a step, so the acceptance
// probability never exceeds 1; the substep counter is a tripwire for that
// invariant).  Fractional expected candidate counts are rounded
// stochastically, never truncated.
Trajectory dsmc_run(const ParticleState& initial, const Restitution& e,
                    double T, double dt, std::uint64_t seed,
                    const DsmcOptions& opts = {});

struct TestFunction {
  std::function<double(double)> phi;
  std::function<double(double)> dphi;
};

// Collision generator in weak form:
//   B(f, phi) = 1/2 sum_{i != j} |gap| (phi(v') + phi(v'_*) - phi(v_i) - phi(v_j)) w_i w_j.
double weak_operator_boltzmann(const DiscreteMeasure& f, const TestFunction& phi,
                               const Restitution& e);

// Limiting pairwise-drift operator:
//   A(f, phi) = (1-e)/4 sum_{i != j} |gap| gap (phi'(v_j) - phi'(v_i)) w_i w_j,
// with gap = v_i - v_j.  For phi(v) = v^2 the residual B - A equals
// (1-e)^2/4 sum_{i != j} |gap|^3 w_i w_j exactly.
double weak_operator_aggregation(const DiscreteMeasure& f,
                                 const TestFunction& phi, const Restitution& e);

}  // namespace gfl
