#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/cli.hpp"
#include "gfl/config.hpp"
#include "gfl/errors.hpp"
#include "gfl/io.hpp"
#include "gfl/measures.hpp"

using namespace gfl;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() /
               ("gfl_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string drop_timestamp_lines(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find("\"timestamp\"") == std::string::npos) out += line + "\n";
  }
  return out;
}

struct CerrCapture {
  std::ostringstream oss;
  std::streambuf* old;
  CerrCapture() : old(std::cerr.rdbuf(oss.rdbuf())) {}
  ~CerrCapture() { std::cerr.rdbuf(old); }
  std::string text() const { return oss.str(); }
};

nlohmann::json read_json(const fs::path& p) {
  return nlohmann::json::parse(read_text_file(p));
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("invalid restitution exits 2 and names the key") {
  CerrCapture cap;
  CHECK(run({"aggregate", "--e", "1.5"}) == 2);
  CHECK(cap.text().find("`e`") != std::string::npos);
  CHECK(cap.text().find("1.5") != std::string::npos);
}

TEST_CASE("top-level parsing: help exits 0, missing subcommand exits 2") {
  CHECK(run({"--help"}) == 0);
  CerrCapture cap;
  CHECK(run(std::vector<std::string>{}) == 2);
  CHECK(run({"frobnicate"}) == 2);
}

TEST_CASE("aggregate writes validated artifacts deterministically") {
  const fs::path dir = fresh_dir("agg");
  const std::vector<std::string> base{"aggregate", "--n",  "20",    "--e",
                                      "0.5",       "--T",  "0.5",   "--dt",
                                      "0.001",     "--seed", "7",   "--validate",
                                      "--out"};
  auto with_out = [&](const std::string& out) {
    std::vector<std::string> args = base;
    args.push_back((dir / out).string());
    return args;
  };
  REQUIRE(run(with_out("a")) == 0);
  REQUIRE(run(with_out("b")) == 0);
  for (const char* name : {"trajectory.csv", "diagnostics.csv"}) {
    CHECK(read_text_file(dir / "a" / name) == read_text_file(dir / "b" / name));
  }
  CHECK(drop_timestamp_lines(read_text_file(dir / "a" / "report.json")) ==
        drop_timestamp_lines(read_text_file(dir / "b" / "report.json")));
  CHECK(read_text_file(dir / "a" / "report.json") !=
        drop_timestamp_lines(read_text_file(dir / "a" / "report.json")));

  nlohmann::json rep = read_json(dir / "a" / "report.json");
  CHECK(rep.at("schema_version") == 1);
  CHECK(rep.at("metrics").at("balance_residual_rel").get<double>() < 1e-4);
  CHECK(rep.at("metrics").at("ordering_violations").get<double>() == 0.0);
}

TEST_CASE("boltzmann emits replica diagnostics and an ensemble summary") {
  const fs::path dir = fresh_dir("bol");
  const std::vector<std::string> args{
      "boltzmann", "--n", "100", "--e", "0.5", "--T", "1", "--dt", "0.01",
      "--seed", "9", "--replicas", "3", "--out", (dir / "r").string(),
      "--validate"};
  REQUIRE(run(args) == 0);
  for (const char* name :
       {"diagnostics_000.csv", "diagnostics_001.csv", "diagnostics_002.csv"}) {
    CHECK(fs::exists(dir / "r" / name));
  }
  nlohmann::json ens = read_json(dir / "r" / "ensemble.json");
  const std::size_t rows = ens.at("times").size();
  REQUIRE(rows > 2);
  CHECK(ens.at("energy_mean").size() == rows);
  CHECK(ens.at("energy_ci").size() == rows);
  CHECK(ens.at("collisions").size() == 3);
  CHECK(ens.at("energy_mean").front().get<double>() >
        ens.at("energy_mean").back().get<double>());

  // Re-running with identical seed reproduces every replica byte for byte.
  const fs::path again = dir / "r2";
  std::vector<std::string> rerun = args;
  rerun[rerun.size() - 2] = again.string();
  REQUIRE(run(rerun) == 0);
  CHECK(read_text_file(dir / "r" / "diagnostics_000.csv") ==
        read_text_file(again / "diagnostics_000.csv"));
  CHECK(drop_timestamp_lines(read_text_file(dir / "r" / "ensemble.json")) ==
        drop_timestamp_lines(read_text_file(again / "ensemble.json")));
}

TEST_CASE("metric subcommand: finite bound, artifacts, infeasible exit 3") {
  const fs::path dir = fresh_dir("met");
  const GridSpec spec{-1.0, 1.0, 21};
  auto normalize = [](std::vector<double> masses) {
    double sum = 0.0;
    for (double w : masses) sum += w;
    for (double& w : masses) w /= sum;
    return masses;
  };
  auto bump = [&](double center) {
    std::vector<double> masses(21);
    for (int k = 0; k < 21; ++k) {
      const double v = spec.node(k);
      masses[static_cast<std::size_t>(k)] =
          std::exp(-(v - center) * (v - center) / 0.05) + 1e-3;
    }
    return DiscreteMeasure::grid(spec, normalize(masses));
  };
  // Symmetrized two-bump start and a centred target share mean zero.
  std::vector<double> two(21);
  for (int k = 0; k < 21; ++k) {
    const double v = spec.node(k);
    two[static_cast<std::size_t>(k)] =
        std::exp(-(v - 0.4) * (v - 0.4) / 0.02) +
        std::exp(-(v + 0.4) * (v + 0.4) / 0.02) + 1e-3;
  }
  two = normalize(two);
  write_file(dir / "mu0.csv", measure_to_csv(DiscreteMeasure::grid(spec, two)));
  write_file(dir / "mu1.csv", measure_to_csv(bump(0.0)));
  write_file(dir / "mu_shift.csv", measure_to_csv(bump(0.3)));

  REQUIRE(run({"metric", "--mu0", (dir / "mu0.csv").string(), "--mu1",
               (dir / "mu1.csv").string(), "--grid", "-1:1:21", "--e", "0.3",
               "--K", "6", "--iters", "15", "--out", (dir / "ok").string(),
               "--validate"}) == 0);
  nlohmann::json rep = read_json(dir / "ok" / "report.json");
  CHECK(rep.at("infinite") == false);
  CHECK(rep.at("upper_bound") == true);
  const double distance = rep.at("distance").get<double>();
  CHECK(distance > 0.0);
  CHECK(rep.at("action2").get<double>() == doctest::Approx(distance * distance));
  CHECK(rep.at("trace").size() >= 1);
  // fluxes.bin: 16-byte header + K * m(m-1)/2 doubles.
  CHECK(fs::file_size(dir / "ok" / "fluxes.bin") == 16 + 6 * (21 * 20 / 2) * 8);

  CerrCapture cap;
  CHECK(run({"metric", "--mu0", (dir / "mu0.csv").string(), "--mu1",
             (dir / "mu_shift.csv").string(), "--grid", "-1:1:21", "--out",
             (dir / "bad").string()}) == 3);
  CHECK(cap.text().find("infeasible: GCE preserves mass and centre of mass") !=
        std::string::npos);
  nlohmann::json bad = read_json(dir / "bad" / "report.json");
  CHECK(bad.at("infinite") == true);

  CHECK(run({"metric", "--mu0", (dir / "mu0.csv").string(), "--mu1",
             (dir / "mu1.csv").string(), "--grid", "1:-1:21"}) == 2);
  CHECK(run({"metric", "--grid", "-1:1:21"}) == 2);
}

TEST_CASE("config file merging: flags win, --seed wins, unknown keys rejected") {
  const fs::path dir = fresh_dir("cfg");
  write_file(dir / "run.json",
             R"({"n": 16, "e": 0.9, "T": 0.2, "dt": 0.001, "seed": 5})");
  REQUIRE(run({"aggregate", "--config", (dir / "run.json").string(), "--e",
               "0.2", "--seed", "9", "--out", (dir / "out").string()}) == 0);
  nlohmann::json rep = read_json(dir / "out" / "report.json");
  CHECK(rep.at("parameters").at("e").get<double>() == 0.2);
  CHECK(rep.at("parameters").at("n").get<int>() == 16);
  CHECK(rep.at("provenance").at("seed").get<int>() == 9);

  write_file(dir / "bad.json", R"({"n": 16, "bogus": 1})");
  CerrCapture cap;
  CHECK(run({"aggregate", "--config", (dir / "bad.json").string()}) == 2);
  CHECK(cap.text().find("`bogus`") != std::string::npos);

  write_file(dir / "broken.json", "{not json");
  CHECK(run({"aggregate", "--config", (dir / "broken.json").string()}) == 2);
  CHECK(run({"aggregate", "--config", (dir / "missing.json").string()}) == 2);
}

TEST_CASE("verify exits 4 when a report check fails") {
  const fs::path dir = fresh_dir("v4");
  // Two antipodal particles over a short horizon: the energy still follows
  // the closed form but the late-time window is too early for the asymptotic
  // slope, so the slope check must fail honestly.
  CerrCapture cap;
  CHECK(run({"verify", "haff", "--n", "2", "--init", "twopoint", "--e", "0",
             "--T", "10", "--dt", "0.001", "--record-every", "10", "--out",
             (dir / "out").string()}) == 4);
  CHECK(cap.text().find("failed check haff_slope") != std::string::npos);
  nlohmann::json rep = read_json(dir / "out" / "report.json");
  CHECK(rep.at("checks").at("haff_slope").at("pass") == false);
  CHECK(rep.at("checks").at("two_particle_closed_form").at("pass") == true);
}

TEST_CASE("verify de_giorgi passes and reruns byte-identically") {
  const fs::path dir = fresh_dir("dg");
  const std::vector<std::string> args{
      "verify", "de_giorgi", "--n", "40", "--T", "2", "--dt", "0.002",
      "--seed", "3", "--validate", "--out", (dir / "a").string()};
  REQUIRE(run(args) == 0);
  std::vector<std::string> again = args;
  again.back() = (dir / "b").string();
  REQUIRE(run(again) == 0);
  CHECK(drop_timestamp_lines(read_text_file(dir / "a" / "report.json")) ==
        drop_timestamp_lines(read_text_file(dir / "b" / "report.json")));
  nlohmann::json rep = read_json(dir / "a" / "report.json");
  for (const auto& [name, check] : rep.at("checks").items()) {
    CHECK(check.at("pass") == true);
  }
}

TEST_CASE("verify rejects unknown experiments and contradictory config") {
  const fs::path dir = fresh_dir("vx");
  CerrCapture cap;
  CHECK(run({"verify", "warp"}) == 2);
  CHECK(cap.text().find("experiment") != std::string::npos);
  write_file(dir / "c.json", R"({"experiment": "haff"})");
  CHECK(run({"verify", "de_giorgi", "--config", (dir / "c.json").string()}) == 2);
}

TEST_CASE("GFL_OUT redirects relative output directories") {
  const fs::path dir = fresh_dir("env");
  ::setenv("GFL_OUT", dir.string().c_str(), 1);
  const int code = run({"aggregate", "--n", "8", "--T", "0.1", "--dt", "0.01",
                        "--out", "sub"});
  ::unsetenv("GFL_OUT");
  REQUIRE(code == 0);
  CHECK(fs::exists(dir / "sub" / "report.json"));
}

TEST_CASE("initial velocity construction covers every recipe") {
  SUBCASE("sampled families pin the empirical mean exactly") {
    for (const char* name : {"normal", "uniform"}) {
      InitSpec spec;
      spec.name = name;
      spec.mean = 0.25;
      std::vector<double> v = build_velocities(spec, 64, 5);
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= 64.0;
      CHECK(mean == doctest::Approx(0.25).epsilon(1e-13));
      CHECK(build_velocities(spec, 64, 5) == v);  // deterministic
      CHECK(build_velocities(spec, 64, 6) != v);
    }
  }
  SUBCASE("twopoint splits evenly and rejects odd counts") {
    InitSpec spec;
    spec.name = "twopoint";
    spec.scale = 2.0;
    std::vector<double> v = build_velocities(spec, 4, 1);
    CHECK(v == std::vector<double>{-2.0, -2.0, 2.0, 2.0});
    CHECK_THROWS_WITH_AS(build_velocities(spec, 5, 1), doctest::Contains("`n`"),
                         ConfigError);
  }
  SUBCASE("file init requires equal weights and a matching count") {
    const fs::path dir = fresh_dir("init");
    write_file(dir / "f.csv",
               measure_to_csv(DiscreteMeasure::empirical_equal({0.5, -0.5, 1.5})));
    InitSpec spec;
    spec.name = "file";
    spec.path = (dir / "f.csv").string();
    // Measures store atoms in sorted position order.
    CHECK(build_velocities(spec, 3, 1) == std::vector<double>{-0.5, 0.5, 1.5});
    CHECK(build_velocities(spec, 0, 1).size() == 3);
    CHECK_THROWS_WITH_AS(build_velocities(spec, 4, 1), doctest::Contains("`n`"),
                         ConfigError);
    write_file(dir / "g.csv", measure_to_csv(DiscreteMeasure::empirical(
                                  {0.0, 1.0}, {0.25, 0.75})));
    spec.path = (dir / "g.csv").string();
    CHECK_THROWS_WITH_AS(build_velocities(spec, 2, 1),
                         doctest::Contains("equal weights"), ConfigError);
    spec.path = (dir / "missing.csv").string();
    CHECK_THROWS_AS(build_velocities(spec, 2, 1), ConfigError);
  }
  SUBCASE("init parsing accepts strings, file:PATH and objects") {
    CHECK(parse_init(nlohmann::json("uniform")).name == "uniform");
    InitSpec file = parse_init(nlohmann::json("file:abc.csv"));
    CHECK(file.name == "file");
    CHECK(file.path == "abc.csv");
    nlohmann::json obj = {{"name", "normal"}, {"mean", 1.0}, {"scale", 0.5}};
    InitSpec parsed = parse_init(obj);
    CHECK(parsed.mean == 1.0);
    CHECK(parsed.scale == 0.5);
    CHECK_THROWS_WITH_AS(parse_init(nlohmann::json("warp")),
                         doctest::Contains("init"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_init(nlohmann::json{{"name", "normal"}, {"junk", 1}}),
                         doctest::Contains("init.junk"), ConfigError);
  }
}

TEST_CASE("grid strings parse strictly") {
  GridSpec spec = parse_grid_string("-1:1:41");
  CHECK(spec.v_min == -1.0);
  CHECK(spec.v_max == 1.0);
  CHECK(spec.m == 41);
  CHECK(parse_grid_string("-2.5:3.5:7").h() == doctest::Approx(1.0));
  for (const char* bad : {"1:2", "a:b:c", "1:2:1", "2:1:5", "1:2:3:4", "1:2:3x"}) {
    CHECK_THROWS_WITH_AS(parse_grid_string(bad), doctest::Contains("`grid`"),
                         ConfigError);
  }
}
