#include "gfl/dsmc.hpp"

#include <algorithm>
#include <cmath>

#include "gfl/compensated.hpp"
#include "gfl/errors.hpp"
#include "gfl/rng.hpp"

namespace gfl {

std::pair<double, double> collide(double v, double v_star, const Restitution& e) {
  const double c = 0.5 * (v + v_star);
  const double d = 0.5 * e.e() * (v_star - v);
  return {c + d, c - d};
}

Trajectory dsmc_run(const ParticleState& initial, const Restitution& e,
                    double T, double dt, std::uint64_t seed,
                    const DsmcOptions& opts) {
  if (!(dt > 0.0)) throw ConfigError("dsmc_run requires dt > 0");
  if (!(T >= 0.0)) throw ConfigError("dsmc_run requires T >= 0");
  const std::size_t n = initial.n();
  if (n == 0) throw ConfigError("dsmc_run needs at least one particle");
  const int record_every = std::max(1, opts.record_every);

  std::vector<double> v = initial.velocities;
  Rng rng(seed);

  Trajectory traj;
  traj.flux_kind = FluxKind::none;
  traj.e = e.e();
  traj.seed = seed;

  auto record = [&](double t, bool want_state) {
    traj.diagnostics.push_back(particle_diagnostics(v, t, e.e(), FluxKind::none));
    if (want_state) traj.states.push_back({v, t});
  };
  record(0.0, true);

  const long long full_steps = static_cast<long long>(std::floor(T / dt + 1e-12));
  double remainder = T - static_cast<double>(full_steps) * dt;
  if (remainder < 1e-12 * dt) remainder = 0.0;
  const long long total_steps = full_steps + (remainder > 0.0 ? 1 : 0);

  for (long long step = 1; step <= total_steps; ++step) {
    const bool is_last = (step == total_steps);
    const double h = (is_last && remainder > 0.0) ? remainder : dt;
    const double t_new = is_last ? T : static_cast<double>(step) * dt;

    if (n >= 2) {
      const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      const double lam = *mx - *mn;
      if (lam > 0.0) {
        // Unordered pair candidate rate lam / n over n(n-1)/2 pairs.
        const double expected = h * lam * static_cast<double>(n - 1) * 0.5;
        long long n_cand = static_cast<long long>(std::floor(expected));
        const double frac = expected - static_cast<double>(n_cand);
        if (rng.uniform() < frac) ++n_cand;

        for (long long c = 0; c < n_cand; ++c) {
          std::size_t i = static_cast<std::size_t>(rng.uniform_index(n));
          std::size_t j = static_cast<std::size_t>(rng.uniform_index(n - 1));
          if (j >= i) ++j;
          const double gap = std::abs(v[i] - v[j]);
          double p = gap / lam;
          if (p > 1.0) {
            // Unreachable while the majorant bounds every gap; tripwire only.
            ++traj.substep_events;
            p = 1.0;
          }
          const double u = rng.uniform();
          if (u < p) {
            const auto [vi, vj] = collide(v[i], v[j], e);
            if (opts.on_collision) opts.on_collision(v[i], v[j], vi, vj);
            v[i] = vi;
            v[j] = vj;
            ++traj.collisions;
          }
        }
      }
    }

    const bool want_record = is_last || (step % record_every == 0);
    const bool want_state =
        is_last || (opts.state_every > 0 && step % opts.state_every == 0);
    if (want_record || want_state) record(t_new, want_state);
  }
  if (total_steps == 0) record(0.0, true);
  return traj;
}

double weak_operator_boltzmann(const DiscreteMeasure& f, const TestFunction& phi,
                               const Restitution& e) {
  if (!phi.phi) throw ConfigError("weak operator needs phi");
  const auto& atoms = f.atoms();
  CompensatedSum acc;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t j = 0; j < atoms.size(); ++j) {
      if (i == j) continue;
      const double vi = atoms[i].position, vj = atoms[j].position;
      const auto [vp, vsp] = collide(vi, vj, e);
      const double gain_loss =
          phi.phi(vp) + phi.phi(vsp) - phi.phi(vi) - phi.phi(vj);
      acc.add(0.5 * std::abs(vi - vj) * gain_loss * atoms[i].weight *
              atoms[j].weight);
    }
  }
  return acc.value();
}

double weak_operator_aggregation(const DiscreteMeasure& f,
                                 const TestFunction& phi, const Restitution& e) {
  if (!phi.dphi) throw ConfigError("weak operator needs dphi");
  const auto& atoms = f.atoms();
  CompensatedSum acc;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t j = 0; j < atoms.size(); ++j) {
      if (i == j) continue;
      const double gap = atoms[i].position - atoms[j].position;
      acc.add(0.25 * (1.0 - e.e()) * std::abs(gap) * gap *
              (phi.dphi(atoms[j].position) - phi.dphi(atoms[i].position)) *
              atoms[i].weight * atoms[j].weight);
    }
  }
  return acc.value();
}

}  // namespace gfl
