#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gfl/aggregation.hpp"
#include "gfl/errors.hpp"
#include "gfl/functionals.hpp"
#include "gfl/measures.hpp"
#include "gfl/rng.hpp"

using namespace gfl;

namespace {

// Direct translation of the force law, independent of the library loop.
std::vector<double> rhs_oracle(const std::vector<double>& v, double e) {
  const std::size_t n = v.size();
  std::vector<double> F(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = v[i] - v[j];
      acc += std::abs(d) * d;
    }
    F[i] = -0.5 * (1.0 - e) / static_cast<double>(n) * acc;
  }
  return F;
}

double two_particle_gap(double r0, double e, double t) {
  return r0 / (1.0 + 0.5 * (1.0 - e) * r0 * t);
}

std::vector<double> random_velocities(Rng& rng, int n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("rhs matches the direct oracle and conserves momentum") {
  Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<double> v = random_velocities(rng, 2 + static_cast<int>(rng.uniform_index(30)));
    const double e = rng.uniform();
    std::vector<double> fast = aggregation_rhs(v, Restitution(e));
    std::vector<double> slow = rhs_oracle(v, e);
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(fast[i] - slow[i]) <= 1e-13 * (1.0 + std::abs(slow[i])));
      sum += fast[i];
    }
    CHECK(std::abs(sum) <= 1e-13 * v.size());
  }
}

TEST_CASE("rhs is identical-to-tolerance across thread counts") {
  Rng rng(12);
  std::vector<double> v = random_velocities(rng, 600);
  std::vector<double> a = aggregation_rhs(v, Restitution(0.4), 1);
  std::vector<double> b = aggregation_rhs(v, Restitution(0.4), 3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(std::abs(a[i] - b[i]) <= 1e-12 * (1.0 + std::abs(a[i])));
  }
}

TEST_CASE("two-particle flow follows the closed-form gap and energy decay") {
  const double e = 0.5, r0 = 2.0, T = 1.0, dt = 1e-3;
  ParticleState init{{-1.0, 1.0}, 0.0};
  Trajectory traj = integrate(init, Restitution(e), T, dt, {.record_every = 100});
  const ParticleState& last = traj.states.back();
  REQUIRE(last.n() == 2);
  const double gap = std::abs(last.velocities[1] - last.velocities[0]);
  const double exact_gap = two_particle_gap(r0, e, T);
  CHECK(std::abs(gap - exact_gap) / exact_gap < 1e-9);  // RK4 at dt = 1e-3

  // E(t) = E(0) / (1 + (1-e) r0 t / 2)^2 for the centered pair.
  const double E0 = traj.diagnostics.front().energy;
  CHECK(E0 == doctest::Approx(0.5).epsilon(1e-14));
  const double shrink = 1.0 + 0.5 * (1.0 - e) * r0 * T;
  CHECK(traj.diagnostics.back().energy ==
        doctest::Approx(E0 / (shrink * shrink)).epsilon(1e-8));
}

TEST_CASE("mean is conserved and energy decays monotonically") {
  Rng rng(21);
  ParticleState init{random_velocities(rng, 50), 0.0};
  Trajectory traj = integrate(init, Restitution(0.2), 2.0, 0.01, {.record_every = 10});
  const double mean0 = mean(init.to_measure());
  const double meanT = mean(traj.states.back().to_measure());
  CHECK(std::abs(meanT - mean0) <= 1e-12);
  for (std::size_t k = 1; k < traj.diagnostics.size(); ++k) {
    CHECK(traj.diagnostics[k].energy <= traj.diagnostics[k - 1].energy + 1e-14);
  }
  CHECK(traj.ordering_violations == 0);
}

TEST_CASE("recorded action equals the functional on the snapshot measure") {
  Rng rng(31);
  ParticleState init{random_velocities(rng, 12), 0.0};
  const double e = 0.35;
  Trajectory traj =
      integrate(init, Restitution(e), 0.5, 0.01, {.record_every = 1, .state_every = 10});
  REQUIRE(traj.states.size() >= 3);
  for (const ParticleState& s : traj.states) {
    DiscreteMeasure f = s.to_measure();
    ExtReal a = action(f, gradient_flow_flux(f), Restitution(e));
    REQUIRE_FALSE(a.infinite);
    // Find the matching diagnostics row.
    bool found = false;
    for (const DiagnosticsRow& row : traj.diagnostics) {
      if (row.t == s.time) {
        CHECK(a.value == doctest::Approx(row.action).epsilon(1e-12));
        CHECK(a.value == doctest::Approx(row.dissipation).epsilon(1e-12));
        found = true;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("energy balance residual is quadrature-small and shrinks with dt") {
  Rng rng(41);
  std::vector<double> v = random_velocities(rng, 20);
  ParticleState init{v, 0.0};
  const double e = 0.5, T = 1.0;
  Trajectory fine = integrate(init, Restitution(e), T, 1e-3, {.record_every = 1});
  const double E0 = fine.diagnostics.front().energy;
  const double g_fine = std::abs(de_giorgi(fine)) / E0;
  CHECK(g_fine < 1e-4);

  Trajectory coarse = integrate(init, Restitution(e), T, 4e-3, {.record_every = 1});
  const double g_coarse = std::abs(de_giorgi(coarse)) / E0;
  CHECK(g_coarse > g_fine);  // second-order quadrature: 4x dt => ~16x residual
}

TEST_CASE("remainder step lands exactly on T") {
  ParticleState init{{-1.0, 0.25, 1.0}, 0.0};
  Trajectory traj = integrate(init, Restitution(0.5), 0.55, 0.1, {});
  CHECK(traj.diagnostics.back().t == 0.55);
  CHECK(traj.states.back().time == 0.55);
  Trajectory zero = integrate(init, Restitution(0.5), 0.0, 0.1, {});
  CHECK(zero.diagnostics.size() >= 2);
  CHECK(zero.duration() == 0.0);
}

TEST_CASE("integrate validates its arguments") {
  ParticleState init{{0.0, 1.0}, 0.0};
  CHECK_THROWS_AS(integrate(init, Restitution(0.5), 1.0, 0.0, {}), ConfigError);
  CHECK_THROWS_AS(integrate(init, Restitution(0.5), -1.0, 0.1, {}), ConfigError);
  CHECK_THROWS_AS(integrate(ParticleState{{}, 0.0}, Restitution(0.5), 1.0, 0.1, {}),
                  ConfigError);
}

TEST_CASE("square-root first moment moves no faster than the action allows") {
  Rng rng(88);
  std::vector<double> v = random_velocities(rng, 30);
  ParticleState init{v, 0.0};
  const double e = 0.3;
  Trajectory traj = integrate(init, Restitution(e), 2.0, 1e-3,
                              {.record_every = 5, .state_every = 5});
  REQUIRE(traj.states.size() > 10);

  auto abs_moment = [](const DiscreteMeasure& f) {
    double m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
      m += f.weight(i) * std::abs(f.position(i));
    return m;
  };
  auto sqrt_action = [&](const ParticleState& s) {
    DiscreteMeasure f = s.to_measure();
    ExtReal a = action(f, gradient_flow_flux(f), Restitution(e));
    REQUIRE_FALSE(a.infinite);
    return std::sqrt(std::max(a.value, 0.0));
  };

  for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
    const ParticleState& a = traj.states[k];
    const ParticleState& b = traj.states[k + 1];
    const double dt = b.time - a.time;
    REQUIRE(dt > 0.0);
    const double lhs =
        std::abs(std::sqrt(abs_moment(b.to_measure())) -
                 std::sqrt(abs_moment(a.to_measure()))) / dt;
    const double rhs = std::sqrt(0.5 * (1.0 - e)) *
                       std::max(sqrt_action(a), sqrt_action(b));
    CHECK(lhs <= rhs * 1.01 + 1e-9);
  }
}

TEST_CASE("velocity diameter never grows along the flow") {
  Rng rng(89);
  std::vector<double> v = random_velocities(rng, 25);
  ParticleState init{v, 0.0};
  Trajectory traj = integrate(init, Restitution(0.1), 3.0, 2e-3,
                              {.record_every = 10, .state_every = 10});
  auto diameter = [](const ParticleState& s) {
    auto [lo, hi] = std::minmax_element(s.velocities.begin(), s.velocities.end());
    return *hi - *lo;
  };
  double prev = diameter(traj.states.front());
  const double slack = 1e-10 * std::max(prev, 1.0);
  for (std::size_t k = 1; k < traj.states.size(); ++k) {
    const double d = diameter(traj.states[k]);
    CHECK(d <= prev + slack);
    prev = d;
  }
  CHECK(diameter(traj.states.back()) < 0.5 * diameter(traj.states.front()));
}
