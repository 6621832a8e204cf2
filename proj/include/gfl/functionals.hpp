#pragma once

#include <cstddef>
#include <vector>

#include "gfl/measures.hpp"
#include "gfl/trajectory.hpp"

namespace gfl {

// Restitution parameter e in [0, 1].  e = 1 is elastic (no energy loss),
// e = 0 is perfectly sticky.
class Restitution {
 public:
  explicit Restitution(double e);
  double e() const { return e_; }
  // Collision mobility weight attached to a velocity gap r >= 0.
  double sigma(double r) const { return 0.25 * (1.0 - e_) * r; }

 private:
  double e_;
};

// Antisymmetric pair assignment U_ij = -U_ji on the atoms of a companion
// measure; only the upper triangle (i < j) is stored.
class PairFlux {
 public:
  static PairFlux zeros(std::vector<double> support);
  // U_ij = g_j - g_i (a discrete gradient).
  static PairFlux from_gradient(const std::vector<double>& support,
                                const std::vector<double>& g);
  // Row-major upper triangle (i < j) of length n(n-1)/2.
  static PairFlux from_upper(std::vector<double> support,
                             std::vector<double> upper);
  // (R - R^T)/2 of a dense square assignment.
  static PairFlux antisymmetrize(std::vector<double> support,
                                 const std::vector<std::vector<double>>& R);

  std::size_t n() const { return support_.size(); }
  const std::vector<double>& support() const { return support_; }
  double operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    return i < j ? upper_[index(i, j)] : -upper_[index(j, i)];
  }
  double& upper(std::size_t i, std::size_t j) { return upper_[index(i, j)]; }
  const std::vector<double>& upper_data() const { return upper_; }
  std::vector<double>& upper_data() { return upper_; }

  std::size_t index(std::size_t i, std::size_t j) const {
    // i < j required.
    return i * (2 * support_.size() - i - 1) / 2 + (j - i - 1);
  }

  bool matches(const DiscreteMeasure& f) const;

 private:
  PairFlux(std::vector<double> support, std::vector<double> upper);
  std::vector<double> support_;
  std::vector<double> upper_;  // n(n-1)/2 entries, row-major over i < j
};

// A finite value or an explicit infinity flag (never an IEEE Inf in reports).
struct ExtReal {
  double value = 0.0;
  bool infinite = false;
};

// Mobility quotient u^2 / s extended to s = 0 (0 if u = 0, +inf otherwise).
// Returns IEEE +inf for the extended case; s < 0 is an error.
double mobility_quotient(double s, double u);

// E(f) = 1/2 sum_i w_i v_i^2.
double kinetic_energy(const DiscreteMeasure& f);

// D(f) = (1-e)/4 sum_{i != j} |v_i - v_j|^3 w_i w_j.
double dissipation(const DiscreteMeasure& f, const Restitution& e);

// W(f) = 1/2 sum_{i != j} (1-e)/6 |v_i - v_j|^3 w_i w_j.  Identity:
// dissipation = 3 * interaction_energy.
double interaction_energy(const DiscreteMeasure& f, const Restitution& e);

// A(f, U) = sum_{i != j} U_ij^2 sigma_e(|v_i - v_j|) w_i w_j, with the
// infinite flag raised when U is nonzero on a pair of zero mobility.
ExtReal action(const DiscreteMeasure& f, const PairFlux& U, const Restitution& e);

// Energy-balance residual of a run:
//   G = E(f_T) - E(f_0) + 1/2 int A dt + 1/2 int D dt,
// integrals by trapezoid over the recorded diagnostics.  Zero (up to
// quadrature) exactly on gradient-flow trajectories.  Trajectories without a
// realized flux are rejected.
struct EnergyBalance {
  double energy_initial = 0.0;
  double energy_final = 0.0;
  double action_integral = 0.0;
  double dissipation_integral = 0.0;
  double residual = 0.0;
};
EnergyBalance energy_balance(const Trajectory& traj);
double de_giorgi(const Trajectory& traj);

}  // namespace gfl
