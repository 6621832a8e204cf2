#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/dsmc.hpp"
#include "gfl/functionals.hpp"
#include "gfl/measures.hpp"
#include "gfl/trajectory.hpp"

namespace gfl {

// One named boolean check with its numeric evidence.  A skipped check is
// neither a pass nor a failure; the reason says why it did not apply
// (including the "inconclusive" outcome of ensemble comparisons).
struct CheckResult {
  bool pass = false;
  double value = 0.0;
  std::string tolerance;  // the bound the value was held against
  bool skipped = false;
  std::string reason;
};

// Structured result of one experiment: parameters in, metrics and checks out.
// Serialization is deterministic (sorted keys, fixed float formatting); the
// wall-clock timestamp is injected only at write time so reports from equal
// (config, seed) agree byte for byte everywhere else.
struct RunReport {
  std::string experiment;
  nlohmann::json parameters = nlohmann::json::object();
  std::map<std::string, double> metrics;
  std::map<std::string, CheckResult> checks;
  std::vector<std::string> notes;
  std::uint64_t seed = 0;

  void add_metric(const std::string& name, double value);
  void add_check(const std::string& name, bool pass, double value,
                 const std::string& tolerance);
  void skip_check(const std::string& name, double value,
                  const std::string& tolerance, const std::string& reason);
  // True when every non-skipped check passes.
  bool all_pass() const;
  nlohmann::json to_json(const std::string& timestamp) const;
};

// Ordinary-least-squares slope of y against x.
double ols_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------
// Algebraic cooling law: run either dynamics, fit the late-time slope of
// log E against log t over the last decade of simulated time, and (for
// two-particle deterministic runs) compare with the exact solution.
struct HaffOptions {
  std::string dynamics = "aggregate";  // "aggregate" or "boltzmann"
  double e = 0.5;
  double T = 80.0;
  double dt = 0.02;
  std::uint64_t seed = 1;
  int record_every = 5;
  int threads = 1;
};

struct HaffResult {
  Trajectory trajectory;
  double slope = 0.0;
  RunReport report;
};

HaffResult haff_experiment(const ParticleState& initial,
                           const HaffOptions& opts);

// ---------------------------------------------------------------------------
// Energy-balance audit of the deterministic flow: the balance residual
//   G = E(T) - E(0) + 1/2 int A + 1/2 int D
// must vanish within quadrature error (tolerance 0.1*dt, halving with dt),
// shrink by >= 3x when dt is halved, and equal 2 int D on the time-reversed
// trajectory within the same tolerance.
struct DeGiorgiOptions {
  double e = 0.5;
  double T = 5.0;
  double dt = 1e-3;
  int threads = 1;
};

struct DeGiorgiResult {
  Trajectory trajectory;  // the coarse (dt) run
  EnergyBalance balance;
  RunReport report;
};

DeGiorgiResult de_giorgi_experiment(const ParticleState& initial,
                                    const DeGiorgiOptions& opts);

// ---------------------------------------------------------------------------
// Near-elastic expansion audit: for phi in {v^2, v^4, sin v} the residual
// |B(f,phi,e) - A(f,phi,e)| between the two weak-form generators scales as
// (1-e)^2; for phi = v^2 the residual is exactly (1-e)^2/4 * S_f with
// S_f = sum_{i != j} |v_i - v_j|^3 w_i w_j.
struct TaylorLinkOptions {
  std::vector<double> e_list = {0.9, 0.95, 0.975, 0.9875};
};

struct TaylorLinkResult {
  std::vector<double> e_list;
  // Residual tables keyed by test-function name ("v2", "v4", "sin").
  std::map<std::string, std::vector<double>> residuals;
  RunReport report;
};

TaylorLinkResult taylor_link_experiment(const DiscreteMeasure& f,
                                        const TaylorLinkOptions& opts);

// ---------------------------------------------------------------------------
// Dynamics comparison: from one shared initial ensemble, run the
// deterministic flow once and the stochastic collision process over an
// ensemble of replicas for each restitution value; measure the 1-Wasserstein
// distance at matched times; check that the time-maximum ensemble-mean
// distance decreases with e beyond one confidence-interval width, reporting
// "inconclusive" (a skip, not a failure) when the intervals are too wide.
struct CompareOptions {
  std::vector<double> e_list = {0.9, 0.95, 0.99};
  int replicas = 16;
  double T = 8.0;
  double dt = 0.01;
  double sample_every = 0.5;  // must be a whole multiple of dt
  std::uint64_t seed = 1;
  int threads = 1;
};

struct CompareCurve {
  double e = 0.0;
  std::vector<double> mean_d1;  // ensemble mean at each positive sample time
  std::vector<double> sd_d1;
  double max_mean_d1 = 0.0;
  double ci_at_max = 0.0;  // 1.96 sd / sqrt(replicas) at the maximizing time
  std::vector<std::vector<DiagnosticsRow>> replica_diagnostics;
  std::vector<DiagnosticsRow> aggregate_diagnostics;
};

struct CompareResult {
  std::vector<double> sample_times;  // positive matched times
  std::vector<CompareCurve> curves;  // one per e, in e_list order
  double scaling_exponent = 0.0;     // slope of log max-distance vs log(1-e)
  std::string verdict;               // "monotone", "inconclusive", "reversed"
  RunReport report;
};

CompareResult compare_experiment(const ParticleState& initial,
                                 const CompareOptions& opts);

// ---------------------------------------------------------------------------
// Stability of the deterministic flow under initial-data perturbations:
// mean-preserving, energy-matched jitters of size eps_n = eps0 * 2^{-(n-1)}
// must yield trajectory distances sup_t d_1 decreasing to 0 with n while
// every perturbed run keeps its energy-balance residual within tolerance.
struct StabilityOptions {
  int perturbations = 5;
  double eps0 = 0.5;
  double e = 0.5;
  double T = 2.0;
  double dt = 0.01;
  std::uint64_t seed = 1;
  int record_every = 10;
  int threads = 1;
};

struct StabilityResult {
  std::vector<double> epsilons;
  std::vector<double> sup_d1;
  double fitted_constant = 0.0;  // smallest C with sup_t d1 <= C * eps_n
  RunReport report;
};

StabilityResult stability_experiment(const ParticleState& initial,
                                     const StabilityOptions& opts);

}  // namespace gfl
