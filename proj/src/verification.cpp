#include "gfl/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gfl/aggregation.hpp"
#include "gfl/compensated.hpp"
#include "gfl/errors.hpp"
#include "gfl/rng.hpp"
#include "gfl/version.hpp"

namespace gfl {
namespace {

nlohmann::json json_real(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

std::string format_e(double e) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", e);
  return buf;
}

double sample_mean(const std::vector<double>& x) {
  CompensatedSum s;
  for (double v : x) s.add(v);
  return s.value() / static_cast<double>(x.size());
}

double sample_sd(const std::vector<double>& x, double mean) {
  if (x.size() < 2) return 0.0;
  CompensatedSum s;
  for (double v : x) s.add((v - mean) * (v - mean));
  return std::sqrt(s.value() / static_cast<double>(x.size() - 1));
}

void require_positive(double value, const char* key) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError(std::string(key) + " must be positive");
  }
}

}  // namespace

void RunReport::add_metric(const std::string& name, double value) {
  metrics[name] = value;
}

void RunReport::add_check(const std::string& name, bool pass, double value,
                          const std::string& tolerance) {
  checks[name] = CheckResult{pass, value, tolerance, false, ""};
}

void RunReport::skip_check(const std::string& name, double value,
                           const std::string& tolerance,
                           const std::string& reason) {
  checks[name] = CheckResult{true, value, tolerance, true, reason};
}

bool RunReport::all_pass() const {
  for (const auto& [name, check] : checks) {
    if (!check.skipped && !check.pass) return false;
  }
  return true;
}

nlohmann::json RunReport::to_json(const std::string& timestamp) const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["experiment"] = experiment;
  j["parameters"] = parameters;
  nlohmann::json jm = nlohmann::json::object();
  for (const auto& [name, value] : metrics) jm[name] = json_real(value);
  j["metrics"] = jm;
  nlohmann::json jc = nlohmann::json::object();
  for (const auto& [name, check] : checks) {
    nlohmann::json entry;
    entry["pass"] = check.pass;
    entry["value"] = json_real(check.value);
    entry["tolerance"] = check.tolerance;
    entry["skipped"] = check.skipped;
    entry["reason"] = check.reason;
    jc[name] = entry;
  }
  j["checks"] = jc;
  j["notes"] = notes;
  j["provenance"] = {{"seed", seed},
                     {"code_version", kVersion},
                     {"timestamp", timestamp}};
  return j;
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ConfigError("slope fit needs at least two samples");
  }
  const double xm = sample_mean(x);
  const double ym = sample_mean(y);
  CompensatedSum sxy, sxx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy.add((x[i] - xm) * (y[i] - ym));
    sxx.add((x[i] - xm) * (x[i] - xm));
  }
  if (sxx.value() <= 0.0) throw ConfigError("slope fit needs spread in x");
  return sxy.value() / sxx.value();
}

// ---------------------------------------------------------------------------

HaffResult haff_experiment(const ParticleState& initial,
                           const HaffOptions& opts) {
  if (opts.dynamics != "aggregate" && opts.dynamics != "boltzmann") {
    throw ConfigError("dynamics must be \"aggregate\" or \"boltzmann\"");
  }
  require_positive(opts.T, "T");
  require_positive(opts.dt, "dt");
  if (opts.record_every < 1) throw ConfigError("record_every must be >= 1");
  Restitution e(opts.e);

  HaffResult out;
  if (opts.dynamics == "aggregate") {
    IntegrateOptions io;
    io.record_every = opts.record_every;
    io.threads = opts.threads;
    out.trajectory = integrate(initial, e, opts.T, opts.dt, io);
  } else {
    DsmcOptions dopts;
    dopts.record_every = opts.record_every;
    out.trajectory = dsmc_run(initial, e, opts.T, opts.dt, opts.seed, dopts);
  }

  RunReport& report = out.report;
  report.experiment = "haff";
  report.seed = opts.seed;
  report.parameters = {{"dynamics", opts.dynamics},
                       {"n", initial.n()},
                       {"e", opts.e},
                       {"T", opts.T},
                       {"dt", opts.dt},
                       {"seed", opts.seed},
                       {"record_every", opts.record_every},
                       {"threads", opts.threads}};

  const std::vector<DiagnosticsRow>& rows = out.trajectory.diagnostics;
  const double e0 = rows.front().energy;
  const double eT = rows.back().energy;
  report.add_metric("energy_initial", e0);
  report.add_metric("energy_final", eT);
  if (e0 > 0.0 && eT > 0.0) {
    report.add_metric("drop_decades", std::log10(e0 / eT));
  }

  if (opts.e == 1.0) {
    report.skip_check("haff_slope", 0.0, "slope in [-2.2, -1.8]",
                      "elastic dynamics: energy is constant, nothing decays");
  } else {
    // Last decade of simulated time, excluding early transients.
    const double window_start = opts.T / 10.0;
    std::vector<double> lt, le;
    for (const DiagnosticsRow& row : rows) {
      if (row.t >= window_start && row.t > 0.0 && row.energy > 0.0) {
        lt.push_back(std::log(row.t));
        le.push_back(std::log(row.energy));
      }
    }
    const double first_positive =
        opts.dt * static_cast<double>(opts.record_every);
    if (window_start < first_positive || lt.size() < 5) {
      throw ConfigError(
          "insufficient horizon: T must cover at least a decade beyond the "
          "first recorded time for the late-time slope fit");
    }
    out.slope = ols_slope(lt, le);
    report.add_metric("slope", out.slope);
    report.add_check("haff_slope", out.slope >= -2.2 && out.slope <= -1.8,
                     out.slope, "slope in [-2.2, -1.8]");
    report.notes.push_back(
        "slope fitted by ordinary least squares of log E against log t over "
        "t in [T/10, T] (the last decade of log-time)");
  }

  if (initial.n() == 2 && opts.dynamics == "aggregate") {
    // Exact two-particle solution: the gap obeys r' = -(1-e) r^2 / 2, so the
    // centred energy decays as (1 + (1-e) r0 t / 2)^{-2}.
    const double c = 0.5 * (initial.velocities[0] + initial.velocities[1]);
    const double r0 = std::abs(initial.velocities[0] - initial.velocities[1]);
    const double centred0 = e0 - 0.5 * c * c;
    double max_rel = 0.0;
    for (const DiagnosticsRow& row : rows) {
      const double denom = 1.0 + 0.5 * (1.0 - opts.e) * r0 * row.t;
      const double expected = 0.5 * c * c + centred0 / (denom * denom);
      max_rel = std::max(max_rel, std::abs(row.energy - expected) /
                                      std::max(expected, 1e-300));
    }
    // 1e-6 from the reference configuration (dt = 1e-3); the dt^4 term keeps
    // the bound meaningful for coarser steps.
    const double tol = std::max(1e-6, 100.0 * std::pow(opts.dt, 4));
    report.add_metric("two_particle_max_rel_err", max_rel);
    report.add_check("two_particle_closed_form", max_rel < tol, max_rel,
                     "max relative error < max(1e-6, 100 dt^4)");
  } else {
    report.skip_check("two_particle_closed_form", 0.0,
                      "max relative error < max(1e-6, 100 dt^4)",
                      "closed form applies to two-particle deterministic runs");
  }
  return out;
}

// ---------------------------------------------------------------------------

DeGiorgiResult de_giorgi_experiment(const ParticleState& initial,
                                    const DeGiorgiOptions& opts) {
  require_positive(opts.T, "T");
  require_positive(opts.dt, "dt");
  Restitution e(opts.e);

  IntegrateOptions io;
  io.record_every = 1;  // dense sampling keeps the quadrature at full order
  io.threads = opts.threads;

  DeGiorgiResult out;
  out.trajectory = integrate(initial, e, opts.T, opts.dt, io);
  out.balance = energy_balance(out.trajectory);
  Trajectory fine = integrate(initial, e, opts.T, 0.5 * opts.dt, io);
  const EnergyBalance fine_balance = energy_balance(fine);

  const double scale = std::max(out.balance.energy_initial, 1e-12);
  const double rel = std::abs(out.balance.residual) / scale;
  const double rel_fine = std::abs(fine_balance.residual) / scale;
  const double tol = 0.1 * opts.dt;

  Trajectory rev = reversed(out.trajectory);
  const EnergyBalance rev_balance = energy_balance(rev);
  const double rev_target = 2.0 * rev_balance.dissipation_integral;
  const double rev_gap = std::abs(rev_balance.residual - rev_target) / scale;

  RunReport& report = out.report;
  report.experiment = "de_giorgi";
  report.seed = 0;
  report.parameters = {{"dynamics", "aggregate"},
                       {"n", initial.n()},
                       {"e", opts.e},
                       {"T", opts.T},
                       {"dt", opts.dt},
                       {"threads", opts.threads}};
  report.add_metric("energy_initial", out.balance.energy_initial);
  report.add_metric("energy_final", out.balance.energy_final);
  report.add_metric("action_integral", out.balance.action_integral);
  report.add_metric("dissipation_integral", out.balance.dissipation_integral);
  report.add_metric("residual_rel", rel);
  report.add_metric("residual_rel_half_dt", rel_fine);
  report.add_metric("reversed_gap_rel", rev_gap);

  report.add_check("balance_within_tol", rel <= tol, rel,
                   "|G| / max(E0, 1e-12) <= 0.1 dt");
  const double ratio = rel_fine > 0.0
                           ? rel / rel_fine
                           : (rel == 0.0 ? 4.0
                                         : std::numeric_limits<double>::infinity());
  report.add_metric("refinement_ratio", ratio);
  report.add_check("refinement_ratio", ratio >= 3.0, ratio,
                   "residual shrinks >= 3x when dt halves");
  report.add_check("reversed_identity", rev_gap <= tol, rev_gap,
                   "|G_rev - 2 int D| / max(E0, 1e-12) <= 0.1 dt");
  return out;
}

// ---------------------------------------------------------------------------

TaylorLinkResult taylor_link_experiment(const DiscreteMeasure& f,
                                        const TaylorLinkOptions& opts) {
  if (opts.e_list.size() < 4) {
    throw ConfigError("e_list needs at least 4 values");
  }
  int near_one = 0;
  for (double e : opts.e_list) {
    if (!(e > 0.0 && e < 1.0)) {
      throw ConfigError("e_list values must lie strictly inside (0, 1)");
    }
    if (e >= 0.8) ++near_one;
  }
  if (near_one < 4) {
    throw ConfigError("e_list needs at least 4 values near 1 (e >= 0.8)");
  }

  // S_f = sum_{i != j} |v_i - v_j|^3 w_i w_j.
  CompensatedSum s_acc;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f.weight(i) == 0.0) continue;
    for (std::size_t j = i + 1; j < f.size(); ++j) {
      const double gap = std::abs(f.position(i) - f.position(j));
      s_acc.add(2.0 * gap * gap * gap * f.weight(i) * f.weight(j));
    }
  }
  const double s_f = s_acc.value();

  struct NamedPhi {
    const char* name;
    TestFunction fn;
  };
  const NamedPhi phis[] = {
      {"v2", {[](double v) { return v * v; }, [](double v) { return 2.0 * v; }}},
      {"v4",
       {[](double v) { return v * v * v * v; },
        [](double v) { return 4.0 * v * v * v; }}},
      {"sin", {[](double v) { return std::sin(v); },
               [](double v) { return std::cos(v); }}},
  };

  TaylorLinkResult out;
  out.e_list = opts.e_list;
  RunReport& report = out.report;
  report.experiment = "taylor_link";
  report.seed = 0;
  report.parameters = {{"e_list", opts.e_list}, {"atoms", f.size()}};

  std::vector<double> log_one_minus_e;
  for (double e : opts.e_list) log_one_minus_e.push_back(std::log(1.0 - e));

  double v2_max_rel = 0.0;
  for (const NamedPhi& phi : phis) {
    std::vector<double>& table = out.residuals[phi.name];
    std::vector<double> log_r;
    bool fit_ok = true;
    for (double ev : opts.e_list) {
      Restitution e(ev);
      const double b = weak_operator_boltzmann(f, phi.fn, e);
      const double a = weak_operator_aggregation(f, phi.fn, e);
      const double r = std::abs(b - a);
      table.push_back(r);
      if (r > 0.0) {
        log_r.push_back(std::log(r));
      } else {
        fit_ok = false;
      }
      if (std::string(phi.name) == "v2") {
        const double exact = 0.25 * (1.0 - ev) * (1.0 - ev) * s_f;
        if (exact > 0.0) {
          v2_max_rel = std::max(v2_max_rel, std::abs(r - exact) / exact);
        }
      }
    }
    const std::string key = std::string("slope_") + phi.name;
    if (fit_ok) {
      const double slope = ols_slope(log_one_minus_e, log_r);
      report.add_metric(key, slope);
      report.add_check(key, slope >= 1.9 && slope <= 2.1, slope,
                       "log-log slope in [1.9, 2.1]");
    } else {
      report.skip_check(key, 0.0, "log-log slope in [1.9, 2.1]",
                        "residual vanished for at least one e; the measure "
                        "carries no signal for this test function");
    }
  }
  report.add_metric("s_f", s_f);
  report.add_metric("v2_exact_max_rel_err", v2_max_rel);
  report.add_check("v2_exact_identity", v2_max_rel <= 1e-10, v2_max_rel,
                   "|B - A| = (1-e)^2/4 S_f to 1e-10 relative");
  return out;
}

// ---------------------------------------------------------------------------

CompareResult compare_experiment(const ParticleState& initial,
                                 const CompareOptions& opts) {
  if (opts.e_list.empty()) throw ConfigError("e_list must not be empty");
  for (double e : opts.e_list) {
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("e_list values must lie in [0, 1]");
  }
  for (std::size_t i = 1; i < opts.e_list.size(); ++i) {
    if (!(opts.e_list[i] > opts.e_list[i - 1])) {
      throw ConfigError("e_list must be strictly increasing");
    }
  }
  if (opts.replicas < 10) {
    throw ConfigError("replicas must be at least 10 for the ensemble CI");
  }
  require_positive(opts.T, "T");
  require_positive(opts.dt, "dt");
  require_positive(opts.sample_every, "sample_every");
  const double steps_per_sample_real = opts.sample_every / opts.dt;
  const int steps_per_sample =
      static_cast<int>(std::llround(steps_per_sample_real));
  if (steps_per_sample < 1 ||
      std::abs(steps_per_sample_real - steps_per_sample) > 1e-9) {
    throw ConfigError("sample_every must be a whole multiple of dt");
  }
  const int threads = std::max(1, opts.threads);

  CompareResult out;
  const int n_samples = static_cast<int>(std::floor(opts.T / opts.sample_every + 1e-9));
  if (n_samples < 1) throw ConfigError("T must cover at least one sample_every");
  for (int s = 1; s <= n_samples; ++s) {
    out.sample_times.push_back(static_cast<double>(s) * opts.sample_every);
  }

  RunReport& report = out.report;
  report.experiment = "compare";
  report.seed = opts.seed;
  report.parameters = {{"n", initial.n()},
                       {"e_list", opts.e_list},
                       {"replicas", opts.replicas},
                       {"T", opts.T},
                       {"dt", opts.dt},
                       {"sample_every", opts.sample_every},
                       {"seed", opts.seed},
                       {"threads", opts.threads}};
  report.notes.push_back(
      "matched-time comparison convention: both dynamics run on the same "
      "clock, no time rescaling between the collision process and the "
      "deterministic flow");

  auto find_state = [&](const Trajectory& traj, double t) -> const ParticleState& {
    for (const ParticleState& s : traj.states) {
      if (std::abs(s.time - t) <= 1e-9 * std::max(1.0, opts.T)) return s;
    }
    throw ConfigError("internal: no recorded state at a matched sample time");
  };

  for (std::size_t ei = 0; ei < opts.e_list.size(); ++ei) {
    const double ev = opts.e_list[ei];
    Restitution e(ev);

    IntegrateOptions io;
    io.record_every = steps_per_sample;
    io.state_every = steps_per_sample;
    // The deterministic flow always runs single-threaded here so the report
    // is bit-identical for every --threads value; threads fan out replicas.
    io.threads = 1;
    Trajectory agg = integrate(initial, e, opts.T, opts.dt, io);
    std::vector<DiscreteMeasure> agg_measures;
    agg_measures.reserve(out.sample_times.size());
    for (double t : out.sample_times) {
      agg_measures.push_back(find_state(agg, t).to_measure());
    }

    CompareCurve curve;
    curve.e = ev;
    curve.aggregate_diagnostics = agg.diagnostics;
    curve.replica_diagnostics.resize(opts.replicas);
    std::vector<std::vector<double>> d1(static_cast<std::size_t>(opts.replicas));

    auto run_replica = [&](int r) {
      DsmcOptions dopts;
      dopts.record_every = steps_per_sample;
      dopts.state_every = steps_per_sample;
      const std::uint64_t replica_seed = derive_seed(
          opts.seed, ei * static_cast<std::size_t>(opts.replicas) +
                         static_cast<std::size_t>(r));
      Trajectory traj =
          dsmc_run(initial, e, opts.T, opts.dt, replica_seed, dopts);
      std::vector<double>& row = d1[static_cast<std::size_t>(r)];
      row.reserve(out.sample_times.size());
      for (std::size_t s = 0; s < out.sample_times.size(); ++s) {
        row.push_back(wasserstein(find_state(traj, out.sample_times[s]).to_measure(),
                                  agg_measures[s], 1));
      }
      curve.replica_diagnostics[static_cast<std::size_t>(r)] =
          std::move(traj.diagnostics);
    };

    if (threads == 1) {
      for (int r = 0; r < opts.replicas; ++r) run_replica(r);
    } else {
      std::vector<std::thread> pool;
      for (int tid = 0; tid < threads; ++tid) {
        pool.emplace_back([&, tid] {
          for (int r = tid; r < opts.replicas; r += threads) run_replica(r);
        });
      }
      for (std::thread& th : pool) th.join();
    }

    std::size_t arg_max = 0;
    for (std::size_t s = 0; s < out.sample_times.size(); ++s) {
      std::vector<double> column;
      column.reserve(d1.size());
      for (const std::vector<double>& row : d1) column.push_back(row[s]);
      const double m = sample_mean(column);
      curve.mean_d1.push_back(m);
      curve.sd_d1.push_back(sample_sd(column, m));
      if (m > curve.mean_d1[arg_max]) arg_max = s;
    }
    curve.max_mean_d1 = curve.mean_d1[arg_max];
    curve.ci_at_max = 1.96 * curve.sd_d1[arg_max] /
                      std::sqrt(static_cast<double>(opts.replicas));
    report.add_metric("max_d1_e=" + format_e(ev), curve.max_mean_d1);
    report.add_metric("ci_e=" + format_e(ev), curve.ci_at_max);
    out.curves.push_back(std::move(curve));
  }

  // Monotone decrease of the time-maximum distance as e increases, judged
  // against one confidence-interval width.
  bool monotone = true;
  bool reversed_significant = false;
  double worst_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < out.curves.size(); ++i) {
    const double gap = out.curves[i].max_mean_d1 - out.curves[i + 1].max_mean_d1;
    const double width =
        std::max(out.curves[i].ci_at_max, out.curves[i + 1].ci_at_max);
    if (!(gap > width)) monotone = false;
    if (gap < -width) reversed_significant = true;
    worst_gap = std::min(worst_gap, gap - width);
  }
  if (out.curves.size() < 2) {
    out.verdict = "inconclusive";
    report.skip_check("monotone_beyond_ci", 0.0,
                      "consecutive max distances decrease by more than one CI",
                      "needs at least two e values");
  } else if (monotone) {
    out.verdict = "monotone";
    report.add_check("monotone_beyond_ci", true, worst_gap,
                     "consecutive max distances decrease by more than one CI");
  } else if (reversed_significant) {
    out.verdict = "reversed";
    report.add_check("monotone_beyond_ci", false, worst_gap,
                     "consecutive max distances decrease by more than one CI");
  } else {
    out.verdict = "inconclusive";
    report.skip_check("monotone_beyond_ci", worst_gap,
                      "consecutive max distances decrease by more than one CI",
                      "inconclusive: confidence interval wider than the effect");
  }

  // Observed scaling of the maximum distance with (1 - e); reported, never
  // asserted.
  std::vector<double> lx, ly;
  for (const CompareCurve& c : out.curves) {
    if (c.e < 1.0 && c.max_mean_d1 > 0.0) {
      lx.push_back(std::log(1.0 - c.e));
      ly.push_back(std::log(c.max_mean_d1));
    }
  }
  if (lx.size() >= 2) {
    out.scaling_exponent = ols_slope(lx, ly);
    report.add_metric("scaling_exponent", out.scaling_exponent);
  }
  return out;
}

// ---------------------------------------------------------------------------

StabilityResult stability_experiment(const ParticleState& initial,
                                     const StabilityOptions& opts) {
  if (opts.perturbations < 1) {
    throw ConfigError("perturbations must be >= 1");
  }
  require_positive(opts.eps0, "eps0");
  require_positive(opts.T, "T");
  require_positive(opts.dt, "dt");
  Restitution e(opts.e);
  const std::size_t n = initial.n();
  if (n < 2) throw ConfigError("n must be >= 2 for a meaningful perturbation");

  IntegrateOptions io;
  io.record_every = opts.record_every;
  io.state_every = opts.record_every;
  io.threads = opts.threads;

  Trajectory base = integrate(initial, e, opts.T, opts.dt, io);
  const double e_base = base.diagnostics.front().energy;
  const double balance_tol = 0.1 * opts.dt;

  StabilityResult out;
  RunReport& report = out.report;
  report.experiment = "stability";
  report.seed = opts.seed;
  report.parameters = {{"n", n},
                       {"e", opts.e},
                       {"T", opts.T},
                       {"dt", opts.dt},
                       {"eps0", opts.eps0},
                       {"perturbations", opts.perturbations},
                       {"seed", opts.seed},
                       {"record_every", opts.record_every},
                       {"threads", opts.threads}};

  const double c = sample_mean(initial.velocities);
  double base_spread = 0.0;  // sum of squared deviations about the mean
  for (double v : initial.velocities) base_spread += (v - c) * (v - c);

  {
    // Zero perturbation reproduces the base run bit for bit.
    Trajectory same = integrate(initial, e, opts.T, opts.dt, io);
    double sup = 0.0;
    for (std::size_t k = 0; k < base.states.size(); ++k) {
      sup = std::max(sup, wasserstein(base.states[k].to_measure(),
                                      same.states[k].to_measure(), 1));
    }
    report.add_check("zero_perturbation_zero_distance", sup == 0.0, sup,
                     "sup_t d1 == 0 exactly for the unperturbed rerun");
  }

  double max_balance_rel = 0.0;
  double worst_monotone_violation = 0.0;
  for (int p = 1; p <= opts.perturbations; ++p) {
    const double eps = opts.eps0 * std::pow(2.0, -(p - 1));
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(p)));
    std::vector<double> v = initial.velocities;
    for (double& x : v) x += eps * rng.normal();
    // Restore the mean exactly, then match the energy by rescaling the
    // deviations about the (shared) mean.
    const double shift = sample_mean(v) - c;
    for (double& x : v) x -= shift;
    double spread = 0.0;
    for (double x : v) spread += (x - c) * (x - c);
    if (spread > 0.0 && base_spread > 0.0) {
      const double s = std::sqrt(base_spread / spread);
      for (double& x : v) x = c + s * (x - c);
    }
    ParticleState perturbed{v, initial.time};
    Trajectory traj = integrate(perturbed, e, opts.T, opts.dt, io);

    double sup = 0.0;
    for (std::size_t k = 0; k < base.states.size(); ++k) {
      sup = std::max(sup, wasserstein(base.states[k].to_measure(),
                                      traj.states[k].to_measure(), 1));
    }
    out.epsilons.push_back(eps);
    out.sup_d1.push_back(sup);
    report.add_metric("eps_" + std::to_string(p), eps);
    report.add_metric("sup_d1_" + std::to_string(p), sup);

    const EnergyBalance bal = energy_balance(traj);
    max_balance_rel =
        std::max(max_balance_rel,
                 std::abs(bal.residual) / std::max(e_base, 1e-12));
    if (p > 1) {
      worst_monotone_violation = std::max(
          worst_monotone_violation, out.sup_d1[p - 1] - out.sup_d1[p - 2]);
    }
  }

  double c_fit = 0.0;
  for (std::size_t i = 0; i < out.epsilons.size(); ++i) {
    c_fit = std::max(c_fit, out.sup_d1[i] / out.epsilons[i]);
  }
  out.fitted_constant = c_fit;
  report.add_metric("fitted_constant", c_fit);
  report.add_metric("max_balance_rel", max_balance_rel);

  report.add_check("distance_monotone", worst_monotone_violation <= 1e-12,
                   worst_monotone_violation,
                   "sup_t d1 non-increasing as eps halves (slack 1e-12)");
  report.add_check("balance_all_runs", max_balance_rel <= balance_tol,
                   max_balance_rel,
                   "|G| / max(E0, 1e-12) <= 0.1 dt for every perturbed run");
  return out;
}

}  // namespace gfl
