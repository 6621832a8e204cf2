#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfl/measures.hpp"

namespace gfl {

// Equal-weight particle ensemble at a fixed time.
struct ParticleState {
  std::vector<double> velocities;
  double time = 0.0;

  std::size_t n() const { return velocities.size(); }
  DiscreteMeasure to_measure() const {
    return DiscreteMeasure::empirical_equal(velocities);
  }
};

// One sampled row of scalar diagnostics along a run.  `action` is NaN for
// dynamics that do not realize a transport flux (stochastic collision runs).
struct DiagnosticsRow {
  double t = 0.0;
  double energy = 0.0;
  double dissipation = 0.0;
  double action = 0.0;
  double interaction_energy = 0.0;
};

enum class FluxKind { none, gradient_flow };

struct Trajectory {
  std::vector<ParticleState> states;      // thinned snapshots, always >= 2
  std::vector<DiagnosticsRow> diagnostics;  // dense sampling incl. t=0 and t=T
  FluxKind flux_kind = FluxKind::none;
  double e = 0.0;  // restitution parameter the run used

  // Provenance / event counters.
  std::uint64_t seed = 0;
  std::uint64_t collisions = 0;
  std::uint64_t substep_events = 0;
  std::uint64_t ordering_violations = 0;

  double duration() const {
    return diagnostics.empty() ? 0.0 : diagnostics.back().t - diagnostics.front().t;
  }
};

// Time reversal t -> T - t of all samples (diagnostics and snapshots).
Trajectory reversed(const Trajectory& traj);

// Trapezoid rule over sample points.
double trapezoid(const std::vector<double>& t, const std::vector<double>& y);

// Scalar diagnostics of a velocity ensemble with weights 1/n.  For
// gradient-flow dynamics the transport flux is the pairwise velocity gap, and
// its action coincides with the dissipation functional term by term, so one
// pair sweep fills the whole row.  `threads` splits the pair loop over
// interleaved index classes; partial sums are combined in a fixed order.
DiagnosticsRow particle_diagnostics(const std::vector<double>& v, double t,
                                    double e, FluxKind flux_kind,
                                    int threads = 1);

// CSV with header "t,energy,dissipation,action,interaction_energy".
std::string diagnostics_csv(const Trajectory& traj);

// CSV of velocity snapshots: header "t,v_1,...,v_n", one row per state.
std::string states_csv(const Trajectory& traj);

}  // namespace gfl
