#include "gfl/functionals.hpp"

#include <cmath>
#include <limits>

#include "gfl/compensated.hpp"
#include "gfl/errors.hpp"

namespace gfl {

Restitution::Restitution(double e) : e_(e) {
  if (!(e >= 0.0 && e <= 1.0)) {
    throw ConfigError("restitution e must lie in [0, 1], got " + format_double(e));
  }
}

PairFlux::PairFlux(std::vector<double> support, std::vector<double> upper)
    : support_(std::move(support)), upper_(std::move(upper)) {
  const std::size_t n = support_.size();
  if (n < 1) throw ConfigError("pair flux needs a nonempty support");
  if (upper_.size() != n * (n - 1) / 2) {
    throw ConfigError("pair flux upper triangle has wrong length");
  }
}

PairFlux PairFlux::zeros(std::vector<double> support) {
  const std::size_t n = support.size();
  return PairFlux(std::move(support), std::vector<double>(n * (n - 1) / 2, 0.0));
}

PairFlux PairFlux::from_gradient(const std::vector<double>& support,
                                 const std::vector<double>& g) {
  if (g.size() != support.size()) {
    throw ConfigError("gradient flux: potential length must match support");
  }
  PairFlux out = zeros(support);
  const std::size_t n = support.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.upper(i, j) = g[j] - g[i];
    }
  }
  return out;
}

PairFlux PairFlux::from_upper(std::vector<double> support,
                              std::vector<double> upper) {
  return PairFlux(std::move(support), std::move(upper));
}

PairFlux PairFlux::antisymmetrize(std::vector<double> support,
                                  const std::vector<std::vector<double>>& R) {
  const std::size_t n = support.size();
  if (R.size() != n) throw ConfigError("antisymmetrize: matrix size mismatch");
  PairFlux out = zeros(std::move(support));
  for (std::size_t i = 0; i < n; ++i) {
    if (R[i].size() != n) throw ConfigError("antisymmetrize: matrix not square");
    for (std::size_t j = i + 1; j < n; ++j) {
      out.upper(i, j) = 0.5 * (R[i][j] - R[j][i]);
    }
  }
  return out;
}

bool PairFlux::matches(const DiscreteMeasure& f) const {
  if (f.size() != support_.size()) return false;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (f.position(i) != support_[i]) return false;
  }
  return true;
}

double mobility_quotient(double s, double u) {
  if (s < 0.0) throw ConfigError("mobility must be nonnegative");
  if (s == 0.0) {
    return u == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return u * u / s;
}

double kinetic_energy(const DiscreteMeasure& f) {
  CompensatedSum acc;
  for (const Atom& a : f.atoms()) acc.add(0.5 * a.weight * a.position * a.position);
  return acc.value();
}

namespace {

// sum_{i != j} |v_i - v_j|^3 w_i w_j  (= 2x the upper-triangle sum).
double cubic_gap_sum(const DiscreteMeasure& f) {
  const auto& atoms = f.atoms();
  CompensatedSum acc;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (atoms[i].weight == 0.0) continue;
    for (std::size_t j = i + 1; j < atoms.size(); ++j) {
      const double d = std::abs(atoms[i].position - atoms[j].position);
      acc.add(d * d * d * atoms[i].weight * atoms[j].weight);
    }
  }
  return 2.0 * acc.value();
}

}  // namespace

double dissipation(const DiscreteMeasure& f, const Restitution& e) {
  return 0.25 * (1.0 - e.e()) * cubic_gap_sum(f);
}

double interaction_energy(const DiscreteMeasure& f, const Restitution& e) {
  return (1.0 - e.e()) / 12.0 * cubic_gap_sum(f);
}

ExtReal action(const DiscreteMeasure& f, const PairFlux& U,
               const Restitution& e) {
  if (!U.matches(f)) {
    throw ConfigError("flux support does not match the measure's atoms");
  }
  const auto& atoms = f.atoms();
  CompensatedSum acc;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    for (std::size_t j = i + 1; j < atoms.size(); ++j) {
      const double u = U(i, j);
      const double m =
          e.sigma(std::abs(atoms[i].position - atoms[j].position)) *
          atoms[i].weight * atoms[j].weight;
      if (m == 0.0) {
        if (u != 0.0) return {0.0, true};
        continue;
      }
      acc.add(2.0 * u * u * m);
    }
  }
  return {acc.value(), false};
}

EnergyBalance energy_balance(const Trajectory& traj) {
  if (traj.flux_kind == FluxKind::none) {
    throw ConfigError(
        "energy balance needs a trajectory with realized fluxes "
        "(no action values recorded along this run)");
  }
  if (traj.diagnostics.size() < 2) {
    throw ConfigError("energy balance needs at least two diagnostic samples");
  }
  std::vector<double> t, a, d;
  t.reserve(traj.diagnostics.size());
  for (const DiagnosticsRow& r : traj.diagnostics) {
    t.push_back(r.t);
    a.push_back(r.action);
    d.push_back(r.dissipation);
  }
  EnergyBalance out;
  out.energy_initial = traj.diagnostics.front().energy;
  out.energy_final = traj.diagnostics.back().energy;
  out.action_integral = trapezoid(t, a);
  out.dissipation_integral = trapezoid(t, d);
  out.residual = out.energy_final - out.energy_initial +
                 0.5 * out.action_integral + 0.5 * out.dissipation_integral;
  return out;
}

double de_giorgi(const Trajectory& traj) { return energy_balance(traj).residual; }

}  // namespace gfl
