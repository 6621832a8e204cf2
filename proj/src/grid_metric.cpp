#include "gfl/grid_metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gfl/compensated.hpp"
#include "gfl/errors.hpp"

namespace gfl {
namespace {

void require_grid_measure(const DiscreteMeasure& f, const VelocityGrid& grid,
                          const char* what) {
  if (f.kind() != MeasureKind::grid) {
    throw ConfigError(std::string(what) +
                      ": measure must be a grid measure (empirical given)");
  }
  if (!(f.grid_spec() == grid.spec())) {
    throw ConfigError(std::string(what) +
                      ": measure lives on a different grid than the solver");
  }
}

// Pair mobilities M_ij = sigma_e(|v_i - v_j|) w_i w_j as a dense symmetric
// matrix with zero diagonal.
Eigen::MatrixXd mobility_matrix(const DiscreteMeasure& f, const Restitution& e) {
  const std::size_t m = f.size();
  Eigen::MatrixXd mob = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double r = std::abs(f.position(i) - f.position(j));
      const double val = e.sigma(r) * f.weight(i) * f.weight(j);
      mob(i, j) = val;
      mob(j, i) = val;
    }
  }
  return mob;
}

// W = 2 (diag(M 1) - M); the mobility-weighted graph Laplacian with
// g^T W g = action of the gradient flux of g.
Eigen::MatrixXd laplacian_from_mobility(const Eigen::MatrixXd& mob) {
  Eigen::VectorXd rowsum = mob.rowwise().sum();
  Eigen::MatrixXd w = -2.0 * mob;
  for (Eigen::Index i = 0; i < mob.rows(); ++i) w(i, i) += 2.0 * rowsum(i);
  return w;
}

// Orthonormal basis of span{1, v} used to deflate the translation/advection
// null directions out of the conjugate-gradient iteration.
Eigen::MatrixXd null_basis(const std::vector<double>& nodes) {
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.size());
  Eigen::MatrixXd z(m, 2);
  z.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(m)));
  Eigen::VectorXd v(m);
  for (Eigen::Index k = 0; k < m; ++k) v(k) = nodes[static_cast<std::size_t>(k)];
  v -= z.col(0) * z.col(0).dot(v);
  const double norm = v.norm();
  if (norm > 0.0) {
    z.col(1) = v / norm;
  } else {
    z.col(1).setZero();
  }
  return z;
}

void project_out(const Eigen::MatrixXd& z, Eigen::VectorXd& x) {
  x -= z * (z.transpose() * x);
}

double checkerboard(const std::vector<double>& w) {
  CompensatedSum s;
  for (std::size_t k = 0; k < w.size(); ++k) {
    s.add((k % 2 == 0) ? w[k] : -w[k]);
  }
  return s.value();
}

std::vector<double> measure_masses(const DiscreteMeasure& f) {
  return f.weights();
}

}  // namespace

VelocityGrid::VelocityGrid(const GridSpec& spec) : spec_(spec) {
  const Eigen::Index m = spec.m;
  if (m < 2) throw ConfigError("grid needs at least 2 nodes");
  d_ = Eigen::MatrixXd::Zero(m, m);
  const double x = 0.5 / spec.h();  // half inverse spacing
  if (m == 2) {
    // Exact slope through the two nodes (derivative of the linear interpolant).
    d_(0, 0) = -2.0 * x;
    d_(0, 1) = 2.0 * x;
    d_(1, 0) = -2.0 * x;
    d_(1, 1) = 2.0 * x;
    return;
  }
  d_(0, 0) = -3.0 * x;
  d_(0, 1) = 4.0 * x;
  d_(0, 2) = -x;
  for (Eigen::Index j = 1; j + 1 < m; ++j) {
    d_(j, j - 1) = -x;
    d_(j, j + 1) = x;
  }
  d_(m - 1, m - 3) = x;
  d_(m - 1, m - 2) = -4.0 * x;
  d_(m - 1, m - 1) = 3.0 * x;
}

std::vector<double> VelocityGrid::nodes() const {
  std::vector<double> out(size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = node(k);
  return out;
}

std::vector<double> discrete_divergence(const PairFlux& U,
                                        const DiscreteMeasure& f,
                                        const VelocityGrid& grid,
                                        const Restitution& e) {
  require_grid_measure(f, grid, "discrete_divergence");
  if (!U.matches(f)) {
    throw ConfigError(
        "discrete_divergence: flux support does not match the measure's atoms");
  }
  const std::size_t m = f.size();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < m; ++j) {
    CompensatedSum acc;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) continue;
      const double r = std::abs(f.position(i) - f.position(j));
      acc.add(2.0 * e.sigma(r) * f.weight(i) * f.weight(j) * U(i, j));
    }
    s(j) = acc.value();
  }
  Eigen::VectorXd out = -(grid.derivative_matrix().transpose() * s);
  return std::vector<double>(out.data(), out.data() + out.size());
}

MinimalFluxResult minimal_flux(const DiscreteMeasure& f,
                               const std::vector<double>& rho,
                               const VelocityGrid& grid,
                               const Restitution& e) {
  require_grid_measure(f, grid, "minimal_flux");
  const std::size_t m = f.size();
  if (rho.size() != m) {
    throw ConfigError("minimal_flux: rho must have one rate per grid node");
  }
  for (double r : rho) {
    if (!std::isfinite(r)) throw ConfigError("minimal_flux: rho is not finite");
  }

  // Mass and first-moment compatibility; without both, no antisymmetric pair
  // exchange can realize rho.
  CompensatedSum mass_sum, mean_sum, abs_sum;
  for (std::size_t k = 0; k < m; ++k) {
    mass_sum.add(rho[k]);
    mean_sum.add(grid.node(k) * rho[k]);
    abs_sum.add(std::abs(rho[k]));
  }
  const double l1 = abs_sum.value();
  const double vscale =
      std::max(std::abs(grid.spec().v_min), std::abs(grid.spec().v_max));
  const double mass_tol = 1e-10 * std::max(1.0, l1);
  const double mean_tol = 1e-10 * std::max(1.0, vscale) * std::max(1.0, l1);
  if (std::abs(mass_sum.value()) > mass_tol ||
      std::abs(mean_sum.value()) > mean_tol) {
    throw InfeasibleError("infeasible: GCE preserves mass and centre of mass");
  }

  const Eigen::MatrixXd mob = mobility_matrix(f, e);
  const Eigen::MatrixXd lap = laplacian_from_mobility(mob);
  const Eigen::MatrixXd& d = grid.derivative_matrix();
  const Eigen::MatrixXd a = d.transpose() * lap * d;
  const Eigen::MatrixXd z = null_basis(grid.nodes());

  Eigen::VectorXd b(m);
  for (std::size_t k = 0; k < m; ++k) b(static_cast<Eigen::Index>(k)) = rho[k];
  const double rho_norm = b.norm();
  project_out(z, b);

  // Jacobi preconditioner on the deflated operator.
  Eigen::VectorXd dinv(m);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(m); ++k) {
    dinv(k) = a(k, k) > 0.0 ? 1.0 / a(k, k) : 1.0;
  }

  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  int iterations = 0;
  const double b_norm = b.norm();
  if (b_norm > 0.0) {
    const int cap = std::max<int>(10 * static_cast<int>(m), 4000);
    const double tol = 1e-12 * b_norm;
    Eigen::VectorXd r = b;
    Eigen::VectorXd zv = dinv.cwiseProduct(r);
    project_out(z, zv);
    Eigen::VectorXd p = zv;
    double rz = r.dot(zv);
    for (; iterations < cap; ++iterations) {
      if (r.norm() <= tol) break;
      Eigen::VectorXd q = a * p;
      project_out(z, q);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) break;  // operator exhausted on this subspace
      const double alpha = rz / pq;
      mu += alpha * p;
      r -= alpha * q;
      zv = dinv.cwiseProduct(r);
      project_out(z, zv);
      const double rz_next = r.dot(zv);
      p = zv + (rz_next / rz) * p;
      rz = rz_next;
    }
  }

  Eigen::VectorXd residual = a * mu;
  project_out(z, residual);
  residual -= b;
  const double rel =
      rho_norm > 0.0 ? residual.norm() / rho_norm : residual.norm();
  if (rel > 1e-8) {
    throw InfeasibleError("infeasible: disconnected support");
  }

  Eigen::VectorXd g = d * mu;
  std::vector<double> g_vec(g.data(), g.data() + g.size());
  PairFlux flux = PairFlux::from_gradient(f.positions(), g_vec);
  // Zero-mobility pairs carry no flux; the gradient form is only determined
  // where the mobility is positive.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (mob(i, j) == 0.0) flux.upper(i, j) = 0.0;
    }
  }

  MinimalFluxResult result{std::move(flux),
                           std::vector<double>(mu.data(), mu.data() + mu.size()),
                           std::move(g_vec),
                           0.0,
                           iterations,
                           rel};
  const ExtReal act = action(f, result.flux, e);
  result.action = act.value;  // finite by construction after the zeroing above
  return result;
}

double path_action(GridPath& path, const Restitution& e) {
  const std::size_t count = path.states.size();
  if (count < 2 || path.times.size() != count) {
    throw ConfigError(
        "path_action: need matching times and states with at least 2 entries");
  }
  VelocityGrid grid(path.grid);
  for (const DiscreteMeasure& f : path.states) {
    require_grid_measure(f, grid, "path_action");
  }
  for (std::size_t k = 0; k + 1 < count; ++k) {
    if (!(path.times[k + 1] > path.times[k])) {
      throw ConfigError("path_action: times must be strictly increasing");
    }
  }
  const std::size_t intervals = count - 1;
  const bool have_fluxes = !path.fluxes.empty();
  if (have_fluxes && path.fluxes.size() != intervals) {
    throw ConfigError("path_action: need one flux per interval");
  }

  path.interval_actions.assign(intervals, 0.0);
  std::vector<PairFlux> computed;
  computed.reserve(have_fluxes ? 0 : intervals);

  CompensatedSum total;
  const std::size_t m = grid.size();
  for (std::size_t k = 0; k < intervals; ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    std::vector<double> mid(m);
    for (std::size_t idx = 0; idx < m; ++idx) {
      mid[idx] =
          0.5 * (path.states[k].weight(idx) + path.states[k + 1].weight(idx));
    }
    DiscreteMeasure f_mid = DiscreteMeasure::grid(path.grid, mid);

    double a_k = 0.0;
    if (have_fluxes) {
      const ExtReal act = action(f_mid, path.fluxes[k], e);
      if (act.infinite) {
        throw InfeasibleError("interval " + std::to_string(k) +
                                  ": infeasible: flux through a zero-mobility "
                                  "pair",
                              static_cast<int>(k));
      }
      a_k = act.value;
    } else {
      std::vector<double> rho(m);
      for (std::size_t idx = 0; idx < m; ++idx) {
        rho[idx] =
            (path.states[k + 1].weight(idx) - path.states[k].weight(idx)) / dt;
      }
      try {
        MinimalFluxResult sol = minimal_flux(f_mid, rho, grid, e);
        a_k = sol.action;
        computed.push_back(std::move(sol.flux));
      } catch (const InfeasibleError& err) {
        throw InfeasibleError(
            "interval " + std::to_string(k) + ": " + err.what(),
            static_cast<int>(k));
      }
    }
    path.interval_actions[k] = a_k;
    total.add(a_k * dt);
  }
  if (!have_fluxes) path.fluxes = std::move(computed);
  return total.value();
}

namespace {

// Per-interval solve data reused by the descent gradient.
struct IntervalSolution {
  std::vector<double> potential;  // mu
  std::vector<double> gradient;   // g = D mu
  PairFlux flux;
  double action = 0.0;
};

struct PathEvaluation {
  bool feasible = false;
  double objective = 0.0;  // sum_k sqrt(A_k) dt
  std::vector<IntervalSolution> intervals;
};

// Evaluates the reparametrization-invariant path objective on uniform times.
PathEvaluation evaluate_path(const std::vector<std::vector<double>>& states,
                             const VelocityGrid& grid, const Restitution& e,
                             double dt) {
  PathEvaluation eval;
  eval.intervals.reserve(states.size() - 1);
  CompensatedSum obj;
  const std::size_t m = grid.size();
  for (std::size_t k = 0; k + 1 < states.size(); ++k) {
    std::vector<double> mid(m), rho(m);
    for (std::size_t idx = 0; idx < m; ++idx) {
      mid[idx] = 0.5 * (states[k][idx] + states[k + 1][idx]);
      rho[idx] = (states[k + 1][idx] - states[k][idx]) / dt;
    }
    DiscreteMeasure f_mid = DiscreteMeasure::grid(grid.spec(), mid);
    try {
      MinimalFluxResult sol = minimal_flux(f_mid, rho, grid, e);
      obj.add(std::sqrt(std::max(sol.action, 0.0)) * dt);
      eval.intervals.push_back(IntervalSolution{std::move(sol.potential),
                                                std::move(sol.gradient),
                                                std::move(sol.flux),
                                                sol.action});
    } catch (const InfeasibleError&) {
      return eval;  // infeasible; caller falls back or stops
    }
  }
  eval.feasible = true;
  eval.objective = obj.value();
  return eval;
}

// Strictly positive reference profile with prescribed extreme-node masses,
// total mass 1, mean, and checkerboard sum; used to bend the interpolation
// away from sign-alternating dead ends.
std::vector<double> reference_profile(const VelocityGrid& grid, double w_lo,
                                      double w_hi, double mean_target,
                                      double chi_target) {
  const std::size_t m = grid.size();
  std::vector<double> u(m, 0.0);
  u[0] = w_lo;
  u[m - 1] = w_hi;
  if (m <= 2) return u;

  const double mid = 0.5 * static_cast<double>(m - 1);
  std::vector<double> tent(m, 0.0);
  for (std::size_t k = 1; k + 1 < m; ++k) {
    tent[k] = 1.0 - std::abs(static_cast<double>(k) - mid) / mid;
  }
  double interior_mass = 0.0;
  for (std::size_t k = 1; k + 1 < m; ++k) {
    u[k] = 1e-3 + tent[k];
    interior_mass += u[k];
  }
  const double target_interior = std::max(1.0 - w_lo - w_hi, 1e-6);
  for (std::size_t k = 1; k + 1 < m; ++k) {
    u[k] *= target_interior / interior_mass;
  }

  // Correction directions supported on the interior.
  std::vector<double> d1(m, 0.0), d2(m, 0.0), dchi(m, 0.0);
  for (std::size_t k = 1; k + 1 < m; ++k) {
    const double t2 = tent[k] * tent[k];
    d1[k] = t2;
    d2[k] = t2 * (grid.node(k) - mean_target);
    dchi[k] = (k % 2 == 0) ? t2 : -t2;
  }
  auto dot_v = [&](const std::vector<double>& x) {
    CompensatedSum s;
    for (std::size_t k = 0; k < m; ++k) s.add(grid.node(k) * x[k]);
    return s.value();
  };
  auto total = [&](const std::vector<double>& x) {
    CompensatedSum s;
    for (double val : x) s.add(val);
    return s.value();
  };

  double chi_weight = 0.0;  // change of chi per unit of dchi
  for (std::size_t k = 1; k + 1 < m; ++k) chi_weight += tent[k] * tent[k];

  for (int pass = 0; pass < 3; ++pass) {
    // Restore total mass and first moment along the smooth directions.
    const double r1 = 1.0 - total(u);
    const double r2 = mean_target - dot_v(u);
    const double a11 = total(d1), a12 = total(d2);
    const double a21 = dot_v(d1), a22 = dot_v(d2);
    const double det = a11 * a22 - a12 * a21;
    if (std::abs(det) > 1e-30) {
      const double ca = (r1 * a22 - r2 * a12) / det;
      const double cb = (a11 * r2 - a21 * r1) / det;
      for (std::size_t k = 1; k + 1 < m; ++k) u[k] += ca * d1[k] + cb * d2[k];
    } else if (a11 > 0.0) {
      for (std::size_t k = 1; k + 1 < m; ++k) u[k] += (r1 / a11) * d1[k];
    }
    // Nudge the checkerboard sum toward its target, bounded by positivity.
    if (chi_weight > 0.0) {
      double c = (chi_target - checkerboard(u)) / chi_weight;
      double limit = std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k + 1 < m; ++k) {
        if (dchi[k] == 0.0) continue;
        const double room = (u[k] - 1e-6) / std::abs(dchi[k]);
        limit = std::min(limit, room);
      }
      c = std::clamp(c, -limit, limit);
      for (std::size_t k = 1; k + 1 < m; ++k) u[k] += c * dchi[k];
    }
    for (std::size_t k = 1; k + 1 < m; ++k) u[k] = std::max(u[k], 1e-6);
  }
  // Final exact mass/mean restore after the clamps.
  const double r1 = 1.0 - total(u);
  const double r2 = mean_target - dot_v(u);
  const double a11 = total(d1), a12 = total(d2);
  const double a21 = dot_v(d1), a22 = dot_v(d2);
  const double det = a11 * a22 - a12 * a21;
  if (std::abs(det) > 1e-30) {
    const double ca = (r1 * a22 - r2 * a12) / det;
    const double cb = (a11 * r2 - a21 * r1) / det;
    for (std::size_t k = 1; k + 1 < m; ++k) u[k] += ca * d1[k] + cb * d2[k];
  } else if (a11 > 0.0) {
    for (std::size_t k = 1; k + 1 < m; ++k) u[k] += (r1 / a11) * d1[k];
  }
  return u;
}

}  // namespace

DAUpperResult d_a_upper(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1,
                        const VelocityGrid& grid, const Restitution& e,
                        int intervals, int iters) {
  require_grid_measure(mu0, grid, "d_a_upper");
  require_grid_measure(mu1, grid, "d_a_upper");
  if (intervals < 1) throw ConfigError("d_a_upper: intervals must be >= 1");
  if (iters < 0) throw ConfigError("d_a_upper: iters must be >= 0");

  const std::size_t m = grid.size();
  const std::vector<double> w0 = measure_masses(mu0);
  const std::vector<double> w1 = measure_masses(mu1);

  DAUpperResult result;

  // Identical endpoints: the constant path has zero action, exactly.
  if (w0 == w1) {
    result.distance = 0.0;
    result.action2 = 0.0;
    result.trace = {0.0};
    result.ladder_blend_index = 0;
    result.path.grid = grid.spec();
    result.path.times = {0.0, 1.0};
    result.path.states = {mu0, mu1};
    result.path.fluxes = {PairFlux::zeros(mu0.positions())};
    result.path.interval_actions = {0.0};
    return result;
  }

  const double vscale =
      std::max(std::abs(grid.spec().v_min), std::abs(grid.spec().v_max));
  const double mean0 = mean(mu0);
  const double mean1 = mean(mu1);
  if (std::abs(mean0 - mean1) > 1e-10 * std::max(1.0, vscale)) {
    result.infinite = true;
    result.reason = "infeasible: GCE preserves mass and centre of mass";
    return result;
  }

  const int k_count = intervals;
  const double dt = 1.0 / static_cast<double>(k_count);
  std::vector<double> times(k_count + 1);
  for (int k = 0; k <= k_count; ++k) {
    times[k] = static_cast<double>(k) / static_cast<double>(k_count);
  }

  // Initialization ladder: plain mass interpolation first, then growing
  // blends toward a strictly positive reference profile.
  const double chi_target = 0.5 * (checkerboard(w0) + checkerboard(w1));
  const std::vector<double> ref = reference_profile(
      grid, 0.5 * (w0[0] + w1[0]), 0.5 * (w0[m - 1] + w1[m - 1]),
      0.5 * (mean0 + mean1), chi_target);
  const std::vector<double> blends = {0.0, 0.01, 0.1, 0.3};

  std::vector<std::vector<double>> states;
  PathEvaluation current;
  int blend_index = -1;
  for (std::size_t b = 0; b < blends.size(); ++b) {
    std::vector<std::vector<double>> candidate(k_count + 1,
                                               std::vector<double>(m));
    for (int k = 0; k <= k_count; ++k) {
      const double s = times[k];
      const double lam = blends[b] * 4.0 * s * (1.0 - s);
      for (std::size_t idx = 0; idx < m; ++idx) {
        const double lin = (1.0 - s) * w0[idx] + s * w1[idx];
        candidate[k][idx] = (1.0 - lam) * lin + lam * ref[idx];
      }
    }
    PathEvaluation eval = evaluate_path(candidate, grid, e, dt);
    if (eval.feasible) {
      states = std::move(candidate);
      current = std::move(eval);
      blend_index = static_cast<int>(b);
      break;
    }
  }
  if (blend_index < 0) {
    result.infinite = true;
    result.reason =
        "no feasible interpolating path found (support obstruction)";
    return result;
  }
  result.ladder_blend_index = blend_index;
  result.trace.push_back(current.objective);

  // Projection of interior-node updates onto the tangent space of the
  // constraints: extreme nodes pinned, total mass and first moment fixed.
  std::vector<Eigen::VectorXd> tangent_basis;
  {
    Eigen::VectorXd q1 = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd q2(m);
    for (std::size_t k = 1; k + 1 < m; ++k) q1(k) = 1.0;
    const double n1 = q1.norm();
    if (n1 > 0.0) q1 /= n1;
    for (std::size_t k = 0; k < m; ++k) {
      q2(k) = (k == 0 || k + 1 == m) ? 0.0 : grid.node(k);
    }
    q2 -= q1 * q1.dot(q2);
    const double n2 = q2.norm();
    if (n1 > 0.0) tangent_basis.push_back(q1);
    if (n2 > 1e-12) tangent_basis.push_back(q2 / n2);
  }
  auto project_update = [&](Eigen::VectorXd& x) {
    x(0) = 0.0;
    x(static_cast<Eigen::Index>(m) - 1) = 0.0;
    for (const Eigen::VectorXd& q : tangent_basis) x -= q * q.dot(x);
  };

  const Restitution& rest = e;
  const double action_floor = 1e-30;
  for (int iter = 0; iter < iters && k_count >= 2; ++iter) {
    // Gradient of sum_k sqrt(A_k) dt with respect to each interior state.
    std::vector<Eigen::VectorXd> grad(k_count + 1,
                                      Eigen::VectorXd::Zero(m));
    for (int k = 0; k < k_count; ++k) {
      const IntervalSolution& sol = current.intervals[k];
      if (sol.action <= action_floor) continue;
      const double coef = dt / (2.0 * std::sqrt(sol.action));
      // d(action)/d(midpoint mass at node c); the optimal flux is fixed to
      // first order, so only the mobility term differentiates.
      Eigen::VectorXd wgrad = Eigen::VectorXd::Zero(m);
      for (std::size_t c = 0; c < m; ++c) {
        CompensatedSum acc;
        const double vc = grid.node(c);
        const double gc = sol.gradient[c];
        for (std::size_t bnode = 0; bnode < m; ++bnode) {
          if (bnode == c) continue;
          const double sig = rest.sigma(std::abs(grid.node(bnode) - vc));
          const double mid_b = 0.5 * (states[k][bnode] + states[k + 1][bnode]);
          const double du = sol.gradient[bnode] - gc;
          acc.add(sig * mid_b * du * du);
        }
        wgrad(static_cast<Eigen::Index>(c)) = -2.0 * acc.value();
      }
      for (std::size_t c = 0; c < m; ++c) {
        const double mu_c = sol.potential[c];
        const Eigen::Index ci = static_cast<Eigen::Index>(c);
        if (k >= 1) {  // dependence of interval k on its left state f_k
          grad[k](ci) += coef * (2.0 * mu_c * (-1.0 / dt) + 0.5 * wgrad(ci));
        }
        if (k + 1 <= k_count - 1) {  // and on its right state f_{k+1}
          grad[k + 1](ci) += coef * (2.0 * mu_c * (1.0 / dt) + 0.5 * wgrad(ci));
        }
      }
    }
    double gmax = 0.0;
    for (int k = 1; k < k_count; ++k) {
      project_update(grad[k]);
      gmax = std::max(gmax, grad[k].lpNorm<Eigen::Infinity>());
    }
    if (gmax == 0.0) break;

    double wmax = 0.0;
    for (int k = 1; k < k_count; ++k) {
      for (double val : states[k]) wmax = std::max(wmax, val);
    }
    double alpha = 0.25 * wmax / gmax;
    // Never let the first trial step eat more than half of any node's
    // distance to the positivity floor.
    for (int k = 1; k < k_count; ++k) {
      for (std::size_t idx = 0; idx < m; ++idx) {
        const double g = grad[k](static_cast<Eigen::Index>(idx));
        if (g > 0.0) {
          alpha = std::min(alpha, 0.5 * (states[k][idx] - 1e-12) / g);
        }
      }
    }
    if (!(alpha > 0.0)) break;
    bool accepted = false;
    for (int bt = 0; bt < 8 && !accepted; ++bt, alpha *= 0.5) {
      std::vector<std::vector<double>> candidate = states;
      bool positive = true;
      for (int k = 1; k < k_count && positive; ++k) {
        for (std::size_t idx = 0; idx < m; ++idx) {
          candidate[k][idx] = states[k][idx] - alpha * grad[k](idx);
          if (candidate[k][idx] < 1e-12) {
            positive = false;
            break;
          }
        }
      }
      if (!positive) continue;
      PathEvaluation eval = evaluate_path(candidate, grid, e, dt);
      if (!eval.feasible) continue;
      if (eval.objective < current.objective) {
        states = std::move(candidate);
        current = std::move(eval);
        result.trace.push_back(current.objective);
        accepted = true;
      }
    }
    if (!accepted) break;  // no further progress at this resolution
  }

  result.distance = current.objective;
  result.action2 = current.objective * current.objective;
  result.path.grid = grid.spec();
  result.path.times = times;
  result.path.states.clear();
  result.path.states.reserve(states.size());
  for (const std::vector<double>& masses : states) {
    result.path.states.push_back(DiscreteMeasure::grid(grid.spec(), masses));
  }
  result.path.fluxes.clear();
  result.path.interval_actions.clear();
  for (IntervalSolution& sol : current.intervals) {
    result.path.fluxes.push_back(std::move(sol.flux));
    result.path.interval_actions.push_back(sol.action);
  }
  return result;
}

}  // namespace gfl
