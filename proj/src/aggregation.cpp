#include "gfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "gfl/errors.hpp"

namespace gfl {

namespace {

void accumulate_forces(const std::vector<double>& v, double coef,
                       std::size_t i0, std::size_t stride,
                       std::vector<double>& F) {
  const std::size_t n = v.size();
  for (std::size_t i = i0; i < n; i += stride) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = v[i] - v[j];
      const double t = coef * std::abs(d) * d;
      F[i] -= t;
      F[j] += t;
    }
  }
}

}  // namespace

std::vector<double> aggregation_rhs(const std::vector<double>& v,
                                    const Restitution& e, int threads) {
  const std::size_t n = v.size();
  if (n == 0) throw ConfigError("aggregation_rhs needs at least one particle");
  if (threads < 1) threads = 1;
  const double coef = 0.5 * (1.0 - e.e()) / static_cast<double>(n);

  if (threads == 1 || n < 256) {
    std::vector<double> F(n, 0.0);
    accumulate_forces(v, coef, 0, 1, F);
    return F;
  }
  // Interleaved row classes with per-thread accumulators, combined in class
  // order: deterministic for a fixed thread count.
  std::vector<std::vector<double>> partial(threads, std::vector<double>(n, 0.0));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int c = 0; c < threads; ++c) {
    pool.emplace_back(
        [&, c]() { accumulate_forces(v, coef, c, threads, partial[c]); });
  }
  for (auto& th : pool) th.join();
  std::vector<double> F(n, 0.0);
  for (const auto& p : partial) {
    for (std::size_t i = 0; i < n; ++i) F[i] += p[i];
  }
  return F;
}

PairFlux gradient_flow_flux(const DiscreteMeasure& f) {
  std::vector<double> neg(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) neg[i] = -f.position(i);
  return PairFlux::from_gradient(f.positions(), neg);  // U_ij = v_i - v_j
}

namespace {

// Count adjacent inversions of v under the fixed initial sort order.
std::uint64_t count_inversions(const std::vector<double>& v,
                               const std::vector<std::size_t>& order) {
  std::uint64_t bad = 0;
  for (std::size_t k = 0; k + 1 < order.size(); ++k) {
    if (v[order[k]] > v[order[k + 1]]) ++bad;
  }
  return bad;
}

}  // namespace

Trajectory integrate(const ParticleState& initial, const Restitution& e,
                     double T, double dt, const IntegrateOptions& opts) {
  if (!(dt > 0.0)) throw ConfigError("integrate requires dt > 0");
  if (!(T >= 0.0)) throw ConfigError("integrate requires T >= 0");
  if (initial.n() == 0) throw ConfigError("integrate needs at least one particle");
  const int record_every = std::max(1, opts.record_every);

  const std::size_t n = initial.n();
  std::vector<double> v = initial.velocities;

  // Fixed full steps, then one remainder step when T is not a multiple of dt.
  const long long full_steps = static_cast<long long>(std::floor(T / dt + 1e-12));
  double remainder = T - static_cast<double>(full_steps) * dt;
  if (remainder < 1e-12 * dt) remainder = 0.0;
  const long long total_steps = full_steps + (remainder > 0.0 ? 1 : 0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });

  Trajectory traj;
  traj.flux_kind = FluxKind::gradient_flow;
  traj.e = e.e();

  auto record = [&](double t, bool want_state) {
    traj.diagnostics.push_back(
        particle_diagnostics(v, t, e.e(), FluxKind::gradient_flow, opts.threads));
    traj.ordering_violations += count_inversions(v, order);
    if (want_state) traj.states.push_back({v, t});
  };

  record(0.0, true);

  std::vector<double> k1, k2, k3, k4, tmp(n);
  for (long long step = 1; step <= total_steps; ++step) {
    const bool is_last = (step == total_steps);
    const double h = (is_last && remainder > 0.0) ? remainder : dt;
    const double t_new = is_last ? T : static_cast<double>(step) * dt;

    k1 = aggregation_rhs(v, e, opts.threads);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = v[i] + 0.5 * h * k1[i];
    k2 = aggregation_rhs(tmp, e, opts.threads);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = v[i] + 0.5 * h * k2[i];
    k3 = aggregation_rhs(tmp, e, opts.threads);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = v[i] + h * k3[i];
    k4 = aggregation_rhs(tmp, e, opts.threads);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }

    const bool want_record = is_last || (step % record_every == 0);
    const bool want_state =
        is_last || (opts.state_every > 0 && step % opts.state_every == 0);
    if (want_record || want_state) record(t_new, want_state);
  }
  if (total_steps == 0) record(0.0, true);  // T == 0: duplicate the endpoint
  return traj;
}

}  // namespace gfl
