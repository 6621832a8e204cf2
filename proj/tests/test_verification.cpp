#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "gfl/errors.hpp"
#include "gfl/measures.hpp"
#include "gfl/rng.hpp"
#include "gfl/verification.hpp"

using namespace gfl;

namespace {

ParticleState normal_state(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return ParticleState{v, 0.0};
}

// Centred sample: the conserved mean would otherwise put an energy floor at
// c^2/2, which flattens the late-time cooling slope.
ParticleState centred_normal_state(std::size_t n, std::uint64_t seed) {
  ParticleState s = normal_state(n, seed);
  double mean = 0.0;
  for (double x : s.velocities) mean += x;
  mean /= static_cast<double>(n);
  for (double& x : s.velocities) x -= mean;
  return s;
}

}  // namespace

TEST_CASE("least-squares slope recovers an exact line and rejects degenerate fits") {
  std::vector<double> x{0.0, 1.0, 2.0, 3.5};
  std::vector<double> y;
  for (double xi : x) y.push_back(3.0 * xi + 1.0);
  CHECK(ols_slope(x, y) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK_THROWS_AS(ols_slope({1.0}, {2.0}), ConfigError);
  CHECK_THROWS_AS(ols_slope({2.0, 2.0}, {1.0, 5.0}), ConfigError);
}

TEST_CASE("run report serialization: sorted keys, sanitized values, pass logic") {
  RunReport report;
  report.experiment = "demo";
  report.seed = 7;
  report.parameters = {{"n", 4}};
  report.add_metric("alpha", 1.5);
  report.add_metric("bad", std::nan(""));
  report.add_check("ok", true, 0.5, "< 1");
  report.skip_check("maybe", 0.0, "n/a", "not applicable here");
  CHECK(report.all_pass());

  report.add_check("broken", false, 2.0, "< 1");
  CHECK_FALSE(report.all_pass());

  nlohmann::json j = report.to_json("2026-01-01T00:00:00Z");
  CHECK(j["schema_version"] == 1);
  CHECK(j["experiment"] == "demo");
  CHECK(j["metrics"]["alpha"] == 1.5);
  CHECK(j["metrics"]["bad"] == "nan");
  CHECK(j["checks"]["ok"]["pass"] == true);
  CHECK(j["checks"]["maybe"]["skipped"] == true);
  CHECK(j["checks"]["maybe"]["reason"] == "not applicable here");
  CHECK(j["checks"]["broken"]["pass"] == false);
  CHECK(j["provenance"]["seed"] == 7);
  CHECK(j["provenance"]["timestamp"] == "2026-01-01T00:00:00Z");
  // Serialization is a pure function of the report contents.
  CHECK(j.dump(2) == report.to_json("2026-01-01T00:00:00Z").dump(2));
}

TEST_CASE("cooling-law experiment: two antipodal particles match the exact solution") {
  ParticleState init{{1.0, -1.0}, 0.0};
  HaffOptions opts;
  opts.dynamics = "aggregate";
  opts.e = 0.0;
  opts.T = 200.0;
  opts.dt = 1e-3;
  opts.record_every = 100;
  HaffResult res = haff_experiment(init, opts);

  const CheckResult& closed = res.report.checks.at("two_particle_closed_form");
  CHECK_FALSE(closed.skipped);
  CHECK(closed.pass);
  CHECK(closed.value < 1e-8);

  const CheckResult& slope = res.report.checks.at("haff_slope");
  CHECK_FALSE(slope.skipped);
  CHECK(slope.pass);  // window [20, 200] sits deep in the t^-2 regime
  CHECK(res.slope == doctest::Approx(-2.0).epsilon(0.05));
  CHECK(res.report.all_pass());
  CHECK(res.report.metrics.at("drop_decades") > 2.0);
}

TEST_CASE("cooling-law experiment: elastic runs skip the slope check") {
  ParticleState init = normal_state(16, 11);
  HaffOptions opts;
  opts.e = 1.0;
  opts.T = 1.0;
  opts.dt = 0.01;
  opts.record_every = 1;
  HaffResult res = haff_experiment(init, opts);
  const CheckResult& slope = res.report.checks.at("haff_slope");
  CHECK(slope.skipped);
  CHECK(slope.reason.find("elastic") != std::string::npos);
  CHECK(res.report.all_pass());
}

TEST_CASE("cooling-law experiment: short horizons and bad dynamics are rejected") {
  ParticleState init = normal_state(8, 3);
  HaffOptions opts;
  opts.e = 0.5;
  opts.T = 0.5;
  opts.dt = 0.1;
  opts.record_every = 5;
  CHECK_THROWS_WITH_AS(haff_experiment(init, opts), doctest::Contains("insufficient horizon"),
                       ConfigError);
  opts.T = 80.0;
  opts.dynamics = "brownian";
  CHECK_THROWS_WITH_AS(haff_experiment(init, opts), doctest::Contains("dynamics"), ConfigError);
}

TEST_CASE("cooling-law experiment: many-particle deterministic flow lands in the slope band") {
  ParticleState init = centred_normal_state(200, 2024);
  HaffOptions opts;
  opts.dynamics = "aggregate";
  opts.e = 0.5;
  opts.T = 80.0;
  opts.dt = 0.02;
  opts.record_every = 5;
  opts.threads = 2;
  HaffResult res = haff_experiment(init, opts);
  CHECK(res.report.checks.at("haff_slope").pass);
  CHECK(res.report.metrics.at("drop_decades") > 2.5);
}

TEST_CASE("cooling-law experiment: collision process follows the same law") {
  ParticleState init = centred_normal_state(500, 99);
  HaffOptions opts;
  opts.dynamics = "boltzmann";
  opts.e = 0.5;
  opts.T = 60.0;
  opts.dt = 0.02;
  opts.seed = 424242;
  opts.record_every = 5;
  HaffResult res = haff_experiment(init, opts);
  CHECK_FALSE(res.report.checks.at("haff_slope").skipped);
  // One stochastic run of 500 particles: allow a slightly wider sanity band
  // than the report's own [-2.2, -1.8] verdict.
  CHECK(res.slope > -2.5);
  CHECK(res.slope < -1.5);
  CHECK(res.report.metrics.at("drop_decades") > 2.0);
}

TEST_CASE("energy-balance experiment: a point mass has identically zero residual") {
  ParticleState init{std::vector<double>(8, 0.7), 0.0};
  DeGiorgiOptions opts;
  opts.e = 0.5;
  opts.T = 1.0;
  opts.dt = 0.01;
  DeGiorgiResult res = de_giorgi_experiment(init, opts);
  CHECK(res.balance.residual == 0.0);
  CHECK(res.report.metrics.at("residual_rel") == 0.0);
  CHECK(res.report.all_pass());
}

TEST_CASE("energy-balance experiment: residual is small and second order in dt") {
  ParticleState init = normal_state(60, 5);
  DeGiorgiOptions opts;
  opts.e = 0.5;
  opts.T = 2.0;
  opts.dt = 2e-3;
  DeGiorgiResult res = de_giorgi_experiment(init, opts);
  CHECK(res.report.checks.at("balance_within_tol").pass);
  CHECK(res.report.checks.at("refinement_ratio").pass);
  CHECK(res.report.checks.at("reversed_identity").pass);
  CHECK(res.report.all_pass());
  CHECK(res.report.metrics.at("residual_rel") < 0.1 * opts.dt);
  // Trapezoid quadrature error should shrink ~4x when dt halves.
  CHECK(res.report.metrics.at("refinement_ratio") > 3.0);
}

TEST_CASE("taylor-link experiment: symmetric two-point measure hits the exact residual") {
  DiscreteMeasure f = DiscreteMeasure::empirical_equal({-1.0, 1.0});
  TaylorLinkOptions opts;
  opts.e_list = {0.9, 0.95, 0.975, 0.9875};
  TaylorLinkResult res = taylor_link_experiment(f, opts);

  // S_f = 2 |2|^3 (1/2)(1/2) = 4, so the quadratic-residual at e = 0.9 is
  // (1-e)^2 / 4 * S_f = 0.01.
  CHECK(res.report.metrics.at("s_f") == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(res.residuals.at("v2")[0] == doctest::Approx(0.01).epsilon(1e-10));
  CHECK(res.report.checks.at("v2_exact_identity").pass);
  CHECK(res.report.checks.at("slope_v2").pass);
  CHECK(res.report.metrics.at("slope_v2") == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("taylor-link experiment: smooth test functions scale quadratically on a sampled bell") {
  Rng rng(77);
  std::vector<double> v(2000);
  // Shift the bell off the origin: on a symmetric sample the quadratic
  // coefficient for sin (which involves sin v + sin v_*) cancels and the fit
  // would be dominated by the cubic remainder.
  for (double& x : v) x = 0.8 + rng.normal();
  DiscreteMeasure f = DiscreteMeasure::empirical_equal(v);
  TaylorLinkOptions opts;
  TaylorLinkResult res = taylor_link_experiment(f, opts);
  CHECK(res.report.checks.at("slope_v2").pass);
  CHECK(res.report.checks.at("slope_v4").pass);
  CHECK(res.report.checks.at("slope_sin").pass);
  CHECK(res.report.checks.at("v2_exact_identity").pass);
  CHECK(res.report.all_pass());
}

TEST_CASE("taylor-link experiment: restitution lists are validated") {
  DiscreteMeasure f = DiscreteMeasure::empirical_equal({-1.0, 1.0});
  TaylorLinkOptions opts;
  opts.e_list = {0.9, 0.95, 0.975};
  CHECK_THROWS_WITH_AS(taylor_link_experiment(f, opts), doctest::Contains("at least 4"),
                       ConfigError);
  opts.e_list = {0.9, 0.95, 0.975, 1.0};
  CHECK_THROWS_WITH_AS(taylor_link_experiment(f, opts), doctest::Contains("(0, 1)"),
                       ConfigError);
  opts.e_list = {0.1, 0.2, 0.3, 0.4};
  CHECK_THROWS_WITH_AS(taylor_link_experiment(f, opts), doctest::Contains("near 1"),
                       ConfigError);
}

TEST_CASE("comparison experiment: ensemble runs, matched times, deterministic reports") {
  ParticleState init = normal_state(300, 314);
  CompareOptions opts;
  opts.e_list = {0.5, 0.9};
  opts.replicas = 10;
  opts.T = 4.0;
  opts.dt = 0.02;
  opts.sample_every = 1.0;
  opts.seed = 2718;
  CompareResult res = compare_experiment(init, opts);

  REQUIRE(res.sample_times.size() == 4);
  CHECK(res.sample_times.front() == doctest::Approx(1.0));
  CHECK(res.sample_times.back() == doctest::Approx(4.0));
  REQUIRE(res.curves.size() == 2);
  for (const CompareCurve& c : res.curves) {
    REQUIRE(c.mean_d1.size() == 4);
    CHECK(c.replica_diagnostics.size() == 10);
    CHECK_FALSE(c.aggregate_diagnostics.empty());
    for (double m : c.mean_d1) CHECK(m > 0.0);
    CHECK(c.max_mean_d1 > 0.0);
    CHECK(c.ci_at_max > 0.0);
  }
  CHECK((res.verdict == "monotone" || res.verdict == "inconclusive" ||
         res.verdict == "reversed"));

  // Identical config and seed must give byte-identical reports.
  CompareResult again = compare_experiment(init, opts);
  CHECK(res.report.to_json("T").dump(2) == again.report.to_json("T").dump(2));

  // Threaded replica fan-out preserves the result exactly.
  CompareOptions threaded = opts;
  threaded.threads = 3;
  CompareResult par = compare_experiment(init, threaded);
  for (std::size_t i = 0; i < res.curves.size(); ++i) {
    for (std::size_t s = 0; s < res.curves[i].mean_d1.size(); ++s) {
      CHECK(par.curves[i].mean_d1[s] == res.curves[i].mean_d1[s]);
    }
  }
}

TEST_CASE("comparison experiment: configuration guard rails") {
  ParticleState init = normal_state(20, 1);
  CompareOptions opts;
  opts.replicas = 5;
  CHECK_THROWS_WITH_AS(compare_experiment(init, opts), doctest::Contains("replicas"),
                       ConfigError);
  opts.replicas = 10;
  opts.dt = 0.02;
  opts.sample_every = 0.05;
  CHECK_THROWS_WITH_AS(compare_experiment(init, opts), doctest::Contains("sample_every"),
                       ConfigError);
  opts.sample_every = 0.5;
  opts.e_list = {0.9, 0.5};
  CHECK_THROWS_WITH_AS(compare_experiment(init, opts),
                       doctest::Contains("strictly increasing"), ConfigError);
}

TEST_CASE("stability experiment: shrinking perturbations shrink the trajectory distance") {
  ParticleState init = normal_state(50, 12);
  StabilityOptions opts;
  opts.e = 0.5;
  opts.T = 1.0;
  opts.dt = 0.01;
  opts.eps0 = 0.4;
  opts.perturbations = 4;
  opts.record_every = 10;
  opts.seed = 5150;
  StabilityResult res = stability_experiment(init, opts);

  REQUIRE(res.epsilons.size() == 4);
  CHECK(res.epsilons[0] == doctest::Approx(0.4));
  CHECK(res.epsilons[3] == doctest::Approx(0.05));
  for (std::size_t i = 1; i < res.sup_d1.size(); ++i) {
    CHECK(res.sup_d1[i] <= res.sup_d1[i - 1] + 1e-12);
  }
  CHECK(res.fitted_constant > 0.0);
  CHECK(res.report.checks.at("distance_monotone").pass);
  CHECK(res.report.checks.at("balance_all_runs").pass);
  CHECK(res.report.all_pass());
}
