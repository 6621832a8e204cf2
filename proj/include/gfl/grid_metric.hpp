#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfl/functionals.hpp"
#include "gfl/measures.hpp"

namespace gfl {

// Fixed velocity grid carrying the finite-difference matrix D that maps node
// values phi(v_k) to node derivative values phi'(v_j): second-order central
// differences in the interior, one-sided second-order stencils at the two
// boundary nodes (first-order exact slope for m = 2).  D annihilates constants
// exactly in floating point, and applied to the node values of v it returns 1
// at every node up to round-off; those two facts make the discrete divergence
// below conserve mass exactly and the first moment to round-off.
class VelocityGrid {
 public:
  explicit VelocityGrid(const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return static_cast<std::size_t>(spec_.m); }
  double node(std::size_t k) const { return spec_.node(k); }
  std::vector<double> nodes() const;
  // The m x m derivative matrix described above.
  const Eigen::MatrixXd& derivative_matrix() const { return d_; }

 private:
  GridSpec spec_;
  Eigen::MatrixXd d_;
};

// Nonlocal divergence of a pair flux against the grid derivative matrix:
//   out_k = -sum_j D_{jk} s_j,   s_j = 2 sum_i sigma_e(|v_i - v_j|) w_i w_j U_ij.
// The result sums to zero exactly and has zero first moment up to round-off,
// so any mass rearrangement it produces preserves total mass and the centre
// of mass.  f must be a grid measure on `grid` and U must live on its atoms.
std::vector<double> discrete_divergence(const PairFlux& U,
                                        const DiscreteMeasure& f,
                                        const VelocityGrid& grid,
                                        const Restitution& e);

struct MinimalFluxResult {
  PairFlux flux;                  // optimal antisymmetric pair flux
  std::vector<double> potential;  // node multipliers mu solving the system
  std::vector<double> gradient;   // g = D mu; U_ij = g_j - g_i
  double action = 0.0;            // action of the returned flux
  int cg_iterations = 0;
  double cg_relative_residual = 0.0;
};

// Least-action flux moving mass at rate rho on the grid:
//   minimize action(f, U, e) subject to -discrete_divergence(U, f) = rho.
// The optimum has gradient form U_ij = g_j - g_i with g = D mu and mu solving
// the symmetric positive semidefinite system (D^T W D) mu = rho, where
// W = 2 (diag(M 1) - M) and M_ij = sigma_e(|v_i - v_j|) w_i w_j.  Solved by
// Jacobi-preconditioned conjugate gradients with the span of {1, v} deflated.
//
// rho must sum to zero and have zero first moment (within 1e-10, scaled);
// otherwise no flux exists ("infeasible: GCE preserves mass and centre of
// mass", GCE = generalized continuity equation, the mass-transport law whose
// velocity-pair exchanges conserve exactly those two quantities).  If rho
// asks for transport across a region of zero mobility the solver cannot
// converge and reports "infeasible: disconnected support".  Pairs with zero
// mobility carry zero flux in the returned solution.
MinimalFluxResult minimal_flux(const DiscreteMeasure& f,
                               const std::vector<double>& rho,
                               const VelocityGrid& grid,
                               const Restitution& e);

// Time-indexed sequence of grid measures with (optionally) one flux per
// interval.  `fluxes` and `interval_actions` are filled by path_action when
// absent.
struct GridPath {
  GridSpec grid;
  std::vector<double> times;             // strictly increasing, size K+1
  std::vector<DiscreteMeasure> states;   // size K+1, all grid kind on `grid`
  std::vector<PairFlux> fluxes;          // size K when present, else empty
  std::vector<double> interval_actions;  // size K when filled
};

// Total action of a path: sum_k action(midpoint_k, U_k, e) * dt_k, with the
// midpoint masses of each interval as mobility.  When fluxes are absent each
// interval is filled with minimal_flux applied to rho_k = (f_{k+1} - f_k)/dt_k.
// Infeasible intervals raise InfeasibleError carrying the interval index.
double path_action(GridPath& path, const Restitution& e);

struct DAUpperResult {
  bool infinite = false;   // set when no finite-cost transport exists
  std::string reason;      // explanation for the infinite flag
  double distance = 0.0;   // upper bound on the transport distance
  double action2 = 0.0;    // distance^2: upper bound on the squared metric
  bool upper_bound = true; // this estimator only ever over-estimates
  std::vector<double> trace;  // objective after init and each accepted step
  GridPath path;              // best path found (with fluxes and actions)
  int ladder_blend_index = -1;  // which initialization blend succeeded
};

// Upper bound on the collision transport distance between two grid measures
// with a common mean.  A discrete path of K intervals is initialized by
// linear interpolation of masses (progressively blended toward a strictly
// positive reference profile if the plain interpolation is infeasible) and
// improved by projected gradient descent on the interior states; every step
// re-solves the per-interval minimal fluxes and the reparametrization-
// invariant objective sum_k sqrt(A_k) dt_k never increases.  Unequal means
// produce the infinite flag with a reason instead of an error.
DAUpperResult d_a_upper(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                        const VelocityGrid& grid, const Restitution& e,
                        int intervals = 16, int iters = 40);

}  // namespace gfl
