#include "gfl/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfl/aggregation.hpp"
#include "gfl/config.hpp"
#include "gfl/dsmc.hpp"
#include "gfl/errors.hpp"
#include "gfl/grid_metric.hpp"
#include "gfl/io.hpp"
#include "gfl/measures.hpp"
#include "gfl/rng.hpp"
#include "gfl/verification.hpp"
#include "gfl/version.hpp"

namespace fs = std::filesystem;

namespace gfl {
namespace {

// ---------------------------------------------------------------------------
// Shared plumbing

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Output root: relative --out paths land under $GFL_OUT when it is set.
fs::path resolve_out(const std::string& out) {
  fs::path p = out.empty() ? fs::path(".") : fs::path(out);
  if (p.is_relative()) {
    const char* root = std::getenv("GFL_OUT");
    if (root != nullptr && *root != '\0') p = fs::path(root) / p;
  }
  fs::create_directories(p);
  return p;
}

int clamp_threads(std::int64_t t) {
  if (t < 1) throw ConfigError("config key `threads` must be >= 1");
  return static_cast<int>(std::min<std::int64_t>(t, 256));
}

std::uint64_t as_seed(std::int64_t s) { return static_cast<std::uint64_t>(s); }

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Default thinning: keep artifact sizes bounded for long runs while always
// recording t = 0 and t = T.
int default_every(std::int64_t steps, std::int64_t target_rows) {
  if (steps <= target_rows) return 1;
  return static_cast<int>((steps + target_rows - 1) / target_rows);
}

std::int64_t step_count(double T, double dt) {
  return std::max<std::int64_t>(1, std::llround(std::ceil(T / dt - 1e-12)));
}

// ---------------------------------------------------------------------------
// Artifact builders

std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "t";
  const std::size_t n = traj.states.front().n();
  for (std::size_t i = 1; i <= n; ++i) out += ",v_" + std::to_string(i);
  out += '\n';
  for (const ParticleState& s : traj.states) {
    out += format_double(s.time);
    for (double v : s.velocities) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string path_csv(const GridPath& path) {
  std::string out = "t";
  for (int k = 1; k <= path.grid.m; ++k) out += ",w_" + std::to_string(k);
  out += '\n';
  for (std::size_t s = 0; s < path.states.size(); ++s) {
    out += format_double(path.times[s]);
    for (std::size_t k = 0; k < path.states[s].size(); ++k) {
      out += ',';
      out += format_double(path.states[s].weight(k));
    }
    out += '\n';
  }
  return out;
}

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xff));
}

void append_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xff));
}

// fluxes.bin layout (all little-endian):
//   bytes 0..3   magic "GFLX"
//   u32          format version (1)
//   u32          m     (grid nodes)
//   u32          K     (intervals)
//   K blocks of  m(m-1)/2 float64: the upper triangle of each interval's
//                pair flux, row-major over i < j (same order as in memory).
std::vector<unsigned char> encode_fluxes(const GridPath& path) {
  std::vector<unsigned char> out;
  out.push_back('G');
  out.push_back('F');
  out.push_back('L');
  out.push_back('X');
  append_u32(out, 1);
  append_u32(out, static_cast<std::uint32_t>(path.grid.m));
  append_u32(out, static_cast<std::uint32_t>(path.fluxes.size()));
  for (const PairFlux& flux : path.fluxes) {
    for (double u : flux.upper_data()) append_f64(out, u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// --validate re-parsers.  Outputs are ours, so failures indicate a bug and
// surface as IoError (exit 2).

void revalidate_csv(const fs::path& file, std::size_t expect_cols) {
  std::istringstream in(read_text_file(file));
  std::string line;
  if (!std::getline(in, line)) throw IoError("validate: empty file " + file.string());
  const std::size_t header_cols =
      1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (expect_cols != 0 && header_cols != expect_cols) {
    throw IoError("validate: " + file.string() + " header has " +
                  std::to_string(header_cols) + " columns, expected " +
                  std::to_string(expect_cols));
  }
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::size_t cols = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      ++cols;
      try {
        std::size_t used = 0;
        (void)std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("junk");
      } catch (const std::exception&) {
        if (cell != "nan" && cell != "inf" && cell != "-inf") {
          throw IoError("validate: non-numeric cell \"" + cell + "\" in " +
                        file.string());
        }
      }
    }
    if (cols != header_cols) {
      throw IoError("validate: ragged row in " + file.string());
    }
  }
  if (rows == 0) throw IoError("validate: no data rows in " + file.string());
}

nlohmann::json revalidate_report(const fs::path& file) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(file), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw IoError("validate: " + file.string() + " is not a JSON object");
  }
  if (!j.contains("schema_version") || j.at("schema_version") != 1) {
    throw IoError("validate: " + file.string() + " lacks schema_version 1");
  }
  return j;
}

void revalidate_fluxes(const fs::path& file, int m, std::size_t k) {
  std::istringstream in(read_text_file(file));
  const std::string bytes = in.str();
  const std::size_t pair_count = static_cast<std::size_t>(m) * (m - 1) / 2;
  const std::size_t expect = 16 + k * pair_count * 8;
  if (bytes.size() != expect) {
    throw IoError("validate: " + file.string() + " holds " +
                  std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(expect));
  }
  if (bytes.compare(0, 4, "GFLX") != 0) {
    throw IoError("validate: " + file.string() + " has a bad magic number");
  }
}

// ---------------------------------------------------------------------------
// aggregate

int cmd_aggregate(const nlohmann::json& cfg, bool validate) {
  reject_unknown_keys(cfg, {"dynamics", "e", "n", "T", "dt", "init", "seed",
                            "out", "threads", "record_every", "state_every"});
  const std::string dynamics = cfg_string(cfg, "dynamics", "aggregate");
  if (dynamics != "aggregate") {
    throw ConfigError("config key `dynamics` must be \"aggregate\" here");
  }
  const double e = validate_e(cfg_real(cfg, "e", 0.5));
  const double T = validate_T(cfg_real(cfg, "T", 10.0));
  const double dt = validate_dt(cfg_real(cfg, "dt", 1e-3));
  const std::size_t n = validate_n(cfg_int(cfg, "n", 100));
  const std::uint64_t seed = as_seed(cfg_int(cfg, "seed", 1));
  const int threads = clamp_threads(cfg_int(cfg, "threads", 1));
  const std::int64_t steps = step_count(T, dt);

  IntegrateOptions io;
  io.record_every =
      static_cast<int>(cfg_int(cfg, "record_every", default_every(steps, 500)));
  io.state_every =
      static_cast<int>(cfg_int(cfg, "state_every", default_every(steps, 50)));
  if (io.record_every < 1) throw ConfigError("config key `record_every` must be >= 1");
  if (io.state_every < 1) throw ConfigError("config key `state_every` must be >= 1");
  io.threads = threads;

  InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                  : nlohmann::json("normal"));
  ParticleState state{build_velocities(init, n, seed), 0.0};
  Trajectory traj = integrate(state, Restitution(e), T, dt, io);
  const EnergyBalance balance = energy_balance(traj);

  RunReport report;
  report.experiment = "aggregate";
  report.seed = seed;
  report.parameters = {{"dynamics", dynamics}, {"e", e},
                       {"n", n},               {"T", T},
                       {"dt", dt},             {"seed", seed},
                       {"record_every", io.record_every},
                       {"state_every", io.state_every},
                       {"threads", threads}};
  report.add_metric("energy_initial", balance.energy_initial);
  report.add_metric("energy_final", balance.energy_final);
  report.add_metric("action_integral", balance.action_integral);
  report.add_metric("dissipation_integral", balance.dissipation_integral);
  report.add_metric("balance_residual_rel",
                    std::abs(balance.residual) /
                        std::max(balance.energy_initial, 1e-12));
  report.add_metric("ordering_violations",
                    static_cast<double>(traj.ordering_violations));

  const fs::path out = resolve_out(cfg_string(cfg, "out", ""));
  write_text_file_atomic(out / "trajectory.csv", trajectory_csv(traj));
  write_text_file_atomic(out / "diagnostics.csv", diagnostics_csv(traj));
  write_text_file_atomic(out / "report.json",
                         json_text(report.to_json(utc_timestamp())));
  if (validate) {
    revalidate_csv(out / "trajectory.csv", n + 1);
    revalidate_csv(out / "diagnostics.csv", 5);
    revalidate_report(out / "report.json");
  }
  std::printf("aggregate: n=%zu e=%s T=%s dt=%s energy %.6g -> %.6g | wrote %s\n",
              n, format_double(e).c_str(), format_double(T).c_str(),
              format_double(dt).c_str(), balance.energy_initial,
              balance.energy_final, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// boltzmann

int cmd_boltzmann(const nlohmann::json& cfg, bool validate) {
  reject_unknown_keys(cfg, {"e", "n", "T", "dt", "init", "seed", "replicas",
                            "out", "threads", "record_every"});
  const double e = validate_e(cfg_real(cfg, "e", 0.5));
  const double T = validate_T(cfg_real(cfg, "T", 10.0));
  const double dt = validate_dt(cfg_real(cfg, "dt", 1e-2));
  const std::size_t n = validate_n(cfg_int(cfg, "n", 1000));
  const std::uint64_t seed = as_seed(cfg_int(cfg, "seed", 1));
  const std::int64_t replicas = cfg_int(cfg, "replicas", 1);
  if (replicas < 1) throw ConfigError("config key `replicas` must be >= 1");
  const int threads = clamp_threads(cfg_int(cfg, "threads", 1));
  const std::int64_t steps = step_count(T, dt);

  DsmcOptions dopts;
  dopts.record_every =
      static_cast<int>(cfg_int(cfg, "record_every", default_every(steps, 500)));
  if (dopts.record_every < 1) {
    throw ConfigError("config key `record_every` must be >= 1");
  }

  InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                  : nlohmann::json("normal"));
  ParticleState state{build_velocities(init, n, seed), 0.0};

  std::vector<Trajectory> runs(static_cast<std::size_t>(replicas));
  auto worker = [&](std::int64_t r) {
    runs[static_cast<std::size_t>(r)] =
        dsmc_run(state, Restitution(e), T, dt,
                 derive_seed(seed, static_cast<std::uint64_t>(r)), dopts);
  };
  if (threads == 1 || replicas == 1) {
    for (std::int64_t r = 0; r < replicas; ++r) worker(r);
  } else {
    std::vector<std::thread> pool;
    for (int tid = 0; tid < threads; ++tid) {
      pool.emplace_back([&, tid] {
        for (std::int64_t r = tid; r < replicas; r += threads) worker(r);
      });
    }
    for (std::thread& th : pool) th.join();
  }

  const fs::path out = resolve_out(cfg_string(cfg, "out", ""));
  std::uint64_t collisions_total = 0;
  for (std::int64_t r = 0; r < replicas; ++r) {
    char name[48];
    std::snprintf(name, sizeof(name), "diagnostics_%03lld.csv",
                  static_cast<long long>(r));
    write_text_file_atomic(out / name,
                           diagnostics_csv(runs[static_cast<std::size_t>(r)]));
    collisions_total += runs[static_cast<std::size_t>(r)].collisions;
  }

  // Ensemble mean and normal 95% CI of the energy decay, on the shared
  // recording grid.
  const std::size_t rows = runs.front().diagnostics.size();
  nlohmann::json times = nlohmann::json::array();
  nlohmann::json mean_arr = nlohmann::json::array();
  nlohmann::json ci_arr = nlohmann::json::array();
  for (std::size_t k = 0; k < rows; ++k) {
    double mean = 0.0;
    for (const Trajectory& run : runs) mean += run.diagnostics[k].energy;
    mean /= static_cast<double>(replicas);
    double var = 0.0;
    for (const Trajectory& run : runs) {
      const double d = run.diagnostics[k].energy - mean;
      var += d * d;
    }
    const double sd =
        replicas > 1 ? std::sqrt(var / static_cast<double>(replicas - 1)) : 0.0;
    times.push_back(runs.front().diagnostics[k].t);
    mean_arr.push_back(mean);
    ci_arr.push_back(1.96 * sd / std::sqrt(static_cast<double>(replicas)));
  }
  nlohmann::json collisions = nlohmann::json::array();
  nlohmann::json substeps = nlohmann::json::array();
  for (const Trajectory& run : runs) {
    collisions.push_back(run.collisions);
    substeps.push_back(run.substep_events);
  }
  nlohmann::json ensemble;
  ensemble["schema_version"] = 1;
  ensemble["experiment"] = "boltzmann";
  ensemble["parameters"] = {{"e", e},       {"n", n},
                            {"T", T},       {"dt", dt},
                            {"seed", seed}, {"replicas", replicas},
                            {"record_every", dopts.record_every},
                            {"threads", threads}};
  ensemble["times"] = times;
  ensemble["energy_mean"] = mean_arr;
  ensemble["energy_ci"] = ci_arr;
  ensemble["collisions"] = collisions;
  ensemble["substep_events"] = substeps;
  ensemble["provenance"] = {{"seed", seed},
                            {"code_version", kVersion},
                            {"timestamp", utc_timestamp()}};
  write_text_file_atomic(out / "ensemble.json", json_text(ensemble));

  if (validate) {
    for (std::int64_t r = 0; r < replicas; ++r) {
      char name[48];
      std::snprintf(name, sizeof(name), "diagnostics_%03lld.csv",
                    static_cast<long long>(r));
      revalidate_csv(out / name, 5);
    }
    revalidate_report(out / "ensemble.json");
  }
  std::printf(
      "boltzmann: n=%zu e=%s T=%s replicas=%lld collisions=%llu energy %.6g -> "
      "%.6g | wrote %s\n",
      n, format_double(e).c_str(), format_double(T).c_str(),
      static_cast<long long>(replicas),
      static_cast<unsigned long long>(collisions_total),
      static_cast<double>(mean_arr.front().get<double>()),
      static_cast<double>(mean_arr.back().get<double>()), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// metric

DiscreteMeasure load_measure_file(const std::string& path, const char* key) {
  if (!fs::exists(path)) {
    throw ConfigError(std::string("config key `") + key +
                      "`: file does not exist: " + path);
  }
  try {
    const std::string text = read_text_file(path);
    return fs::path(path).extension() == ".json" ? measure_from_json(text)
                                                 : measure_from_csv(text);
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("config key `") + key + "`: " + ex.what());
  }
}

void check_on_grid(const DiscreteMeasure& f, const GridSpec& grid,
                   const char* key) {
  const bool ok = f.size() == static_cast<std::size_t>(grid.m) &&
                  [&] {
                    for (int k = 0; k < grid.m; ++k) {
                      if (f.position(static_cast<std::size_t>(k)) != grid.node(k)) return false;
                    }
                    return true;
                  }();
  if (!ok) {
    throw ConfigError(std::string("config key `") + key +
                      "`: measure must live exactly on the grid nodes");
  }
}

int cmd_metric(const nlohmann::json& cfg, bool validate) {
  reject_unknown_keys(cfg, {"mu0", "mu1", "grid", "e", "K", "iters", "out",
                            "threads"});
  const std::string mu0_path = cfg_string(cfg, "mu0", "");
  const std::string mu1_path = cfg_string(cfg, "mu1", "");
  if (mu0_path.empty()) throw ConfigError("config key `mu0` is required (path to a measure file)");
  if (mu1_path.empty()) throw ConfigError("config key `mu1` is required (path to a measure file)");
  const std::string grid_text = cfg_string(cfg, "grid", "");
  if (grid_text.empty()) throw ConfigError("config key `grid` is required (vmin:vmax:m)");
  const GridSpec grid = parse_grid_string(grid_text);
  const double e = validate_e(cfg_real(cfg, "e", 0.5));
  const std::int64_t intervals = cfg_int(cfg, "K", 16);
  if (intervals < 1) throw ConfigError("config key `K` must be >= 1");
  const std::int64_t iters = cfg_int(cfg, "iters", 40);
  if (iters < 0) throw ConfigError("config key `iters` must be >= 0");
  (void)clamp_threads(cfg_int(cfg, "threads", 1));  // accepted; solver is sequential

  auto load_grid_measure = [&](const std::string& path, const char* key) {
    DiscreteMeasure raw = load_measure_file(path, key);
    check_on_grid(raw, grid, key);
    std::vector<double> masses;
    masses.reserve(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) masses.push_back(raw.weight(k));
    return DiscreteMeasure::grid(grid, std::move(masses));
  };
  DiscreteMeasure mu0 = load_grid_measure(mu0_path, "mu0");
  DiscreteMeasure mu1 = load_grid_measure(mu1_path, "mu1");

  DAUpperResult res =
      d_a_upper(mu0, mu1, VelocityGrid(grid), Restitution(e),
                static_cast<int>(intervals), static_cast<int>(iters));

  nlohmann::json report;
  report["schema_version"] = 1;
  report["experiment"] = "metric";
  report["parameters"] = {{"mu0", mu0_path}, {"mu1", mu1_path},
                          {"grid", grid_text}, {"e", e},
                          {"K", intervals},  {"iters", iters}};
  report["infinite"] = res.infinite;
  report["reason"] = res.reason;
  report["upper_bound"] = res.upper_bound;
  report["provenance"] = {{"code_version", kVersion},
                          {"timestamp", utc_timestamp()}};
  const fs::path out = resolve_out(cfg_string(cfg, "out", ""));

  if (res.infinite) {
    write_text_file_atomic(out / "report.json", json_text(report));
    std::cerr << res.reason << "\n";
    return 3;
  }

  report["distance"] = res.distance;
  report["action2"] = res.action2;
  report["trace"] = res.trace;
  report["interval_actions"] = res.path.interval_actions;
  report["ladder_blend_index"] = res.ladder_blend_index;
  write_text_file_atomic(out / "report.json", json_text(report));
  write_text_file_atomic(out / "path.csv", path_csv(res.path));
  write_binary_file_atomic(out / "fluxes.bin", encode_fluxes(res.path));

  if (validate) {
    revalidate_report(out / "report.json");
    revalidate_csv(out / "path.csv", static_cast<std::size_t>(grid.m) + 1);
    revalidate_fluxes(out / "fluxes.bin", grid.m, res.path.fluxes.size());
  }
  std::printf(
      "metric: distance upper bound %.10g (squared %.10g) K=%lld blend=%d | "
      "wrote %s\n",
      res.distance, res.action2, static_cast<long long>(intervals),
      res.ladder_blend_index, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// verify / compare

int cmd_verify(const std::string& experiment, const nlohmann::json& cfg,
               bool validate) {
  RunReport report;
  const fs::path out = resolve_out(cfg_string(cfg, "out", ""));

  if (experiment == "haff") {
    reject_unknown_keys(cfg, {"experiment", "dynamics", "e", "n", "T", "dt",
                              "init", "seed", "record_every", "threads", "out"});
    HaffOptions opts;
    opts.dynamics = cfg_string(cfg, "dynamics", "aggregate");
    opts.e = validate_e(cfg_real(cfg, "e", 0.5));
    opts.T = validate_T(cfg_real(cfg, "T", 80.0));
    opts.dt = validate_dt(cfg_real(cfg, "dt", 0.02));
    opts.seed = as_seed(cfg_int(cfg, "seed", 1));
    opts.record_every = static_cast<int>(cfg_int(cfg, "record_every", 5));
    opts.threads = clamp_threads(cfg_int(cfg, "threads", 1));
    const std::size_t n = validate_n(cfg_int(cfg, "n", 1000));
    InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                    : nlohmann::json("normal"));
    ParticleState state{build_velocities(init, n, opts.seed), 0.0};
    report = haff_experiment(state, opts).report;
  } else if (experiment == "de_giorgi") {
    reject_unknown_keys(cfg, {"experiment", "e", "n", "T", "dt", "init",
                              "seed", "threads", "out"});
    DeGiorgiOptions opts;
    opts.e = validate_e(cfg_real(cfg, "e", 0.5));
    opts.T = validate_T(cfg_real(cfg, "T", 5.0));
    opts.dt = validate_dt(cfg_real(cfg, "dt", 1e-3));
    opts.threads = clamp_threads(cfg_int(cfg, "threads", 1));
    const std::size_t n = validate_n(cfg_int(cfg, "n", 100));
    const std::uint64_t seed = as_seed(cfg_int(cfg, "seed", 1));
    InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                    : nlohmann::json("normal"));
    ParticleState state{build_velocities(init, n, seed), 0.0};
    report = de_giorgi_experiment(state, opts).report;
    report.seed = seed;
  } else if (experiment == "taylor") {
    reject_unknown_keys(cfg,
                        {"experiment", "e_list", "n", "init", "seed", "out"});
    TaylorLinkOptions opts;
    opts.e_list = cfg_real_list(cfg, "e_list", opts.e_list);
    const std::uint64_t seed = as_seed(cfg_int(cfg, "seed", 1));
    InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                    : nlohmann::json("normal"));
    DiscreteMeasure f = DiscreteMeasure::empirical_equal({-1.0, 1.0});
    if (init.name == "file") {
      f = load_measure_file(init.path, "init");
    } else {
      // Default the sample off the origin: a symmetric sample kills the
      // quadratic coefficient for odd test functions such as sin.
      if (!cfg.contains("init")) init.mean = 0.8;
      const std::size_t n = validate_n(cfg_int(cfg, "n", 2000));
      f = DiscreteMeasure::empirical_equal(build_velocities(init, n, seed));
    }
    report = taylor_link_experiment(f, opts).report;
    report.seed = seed;
  } else if (experiment == "compare") {
    reject_unknown_keys(cfg, {"experiment", "e_list", "n", "T", "dt",
                              "sample_every", "replicas", "init", "seed",
                              "threads", "out"});
    CompareOptions opts;
    opts.e_list = cfg_real_list(cfg, "e_list", opts.e_list);
    opts.replicas = static_cast<int>(cfg_int(cfg, "replicas", 16));
    opts.T = validate_T(cfg_real(cfg, "T", 8.0));
    opts.dt = validate_dt(cfg_real(cfg, "dt", 0.01));
    opts.sample_every = cfg_real(cfg, "sample_every", 0.5);
    opts.seed = as_seed(cfg_int(cfg, "seed", 1));
    opts.threads = clamp_threads(cfg_int(cfg, "threads", 1));
    const std::size_t n = validate_n(cfg_int(cfg, "n", 2000));
    InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                    : nlohmann::json("normal"));
    ParticleState state{build_velocities(init, n, opts.seed), 0.0};
    report = compare_experiment(state, opts).report;
  } else if (experiment == "stability") {
    reject_unknown_keys(cfg, {"experiment", "e", "n", "T", "dt", "eps0",
                              "perturbations", "init", "seed", "record_every",
                              "threads", "out"});
    StabilityOptions opts;
    opts.e = validate_e(cfg_real(cfg, "e", 0.5));
    opts.T = validate_T(cfg_real(cfg, "T", 2.0));
    opts.dt = validate_dt(cfg_real(cfg, "dt", 0.01));
    opts.eps0 = cfg_real(cfg, "eps0", 0.5);
    opts.perturbations = static_cast<int>(cfg_int(cfg, "perturbations", 5));
    opts.seed = as_seed(cfg_int(cfg, "seed", 1));
    opts.record_every = static_cast<int>(cfg_int(cfg, "record_every", 10));
    opts.threads = clamp_threads(cfg_int(cfg, "threads", 1));
    const std::size_t n = validate_n(cfg_int(cfg, "n", 50));
    InitSpec init = parse_init(cfg.contains("init") ? cfg.at("init")
                                                    : nlohmann::json("normal"));
    ParticleState state{build_velocities(init, n, opts.seed), 0.0};
    report = stability_experiment(state, opts).report;
  } else {
    throw ConfigError(
        "config key `experiment` must be one of haff, de_giorgi, taylor, "
        "compare, stability; got \"" +
        experiment + "\"");
  }

  write_text_file_atomic(out / "report.json",
                         json_text(report.to_json(utc_timestamp())));
  if (validate) revalidate_report(out / "report.json");

  std::size_t passed = 0, failed = 0, skipped = 0;
  for (const auto& [name, check] : report.checks) {
    if (check.skipped) {
      ++skipped;
    } else if (check.pass) {
      ++passed;
    } else {
      ++failed;
    }
  }
  if (!report.all_pass()) {
    for (const auto& [name, check] : report.checks) {
      if (!check.skipped && !check.pass) {
        std::cerr << "failed check " << name << ": value "
                  << format_double(check.value) << ", tolerance "
                  << check.tolerance << "\n";
      }
    }
    std::printf("verify %s: %zu passed, %zu FAILED, %zu skipped | wrote %s\n",
                experiment.c_str(), passed, failed, skipped,
                out.string().c_str());
    return 4;
  }
  std::printf("verify %s: %zu passed, %zu skipped | wrote %s\n",
              experiment.c_str(), passed, skipped, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// Flag plumbing

struct FlagStore {
  std::string config, out, init, dynamics, grid, mu0, mu1;
  double e = 0, T = 0, dt = 0, sample_every = 0, eps0 = 0;
  std::int64_t n = 0, seed = 0, replicas = 0, threads = 0, record_every = 0,
               state_every = 0, K = 0, iters = 0, perturbations = 0;
  std::vector<double> e_list;
  bool validate = false;
};

void add_common_options(CLI::App* cmd, FlagStore& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--out", f.out, "output directory (under $GFL_OUT if relative)");
  cmd->add_option("--seed", f.seed, "RNG seed (always wins over config)");
  cmd->add_option("--threads", f.threads, "worker cap, default 1 for bit-stability");
  cmd->add_flag("--validate", f.validate, "re-parse all outputs after writing");
}

// Copies a flag into the config object when it was given on the command line;
// flags win over config-file values.
void merge_flags(CLI::App* cmd, const FlagStore& f, nlohmann::json& cfg) {
  auto have = [&](const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (have("--e")) cfg["e"] = f.e;
  if (have("--T")) cfg["T"] = f.T;
  if (have("--dt")) cfg["dt"] = f.dt;
  if (have("--n")) cfg["n"] = f.n;
  if (have("--seed")) cfg["seed"] = f.seed;
  if (have("--replicas")) cfg["replicas"] = f.replicas;
  if (have("--threads")) cfg["threads"] = f.threads;
  if (have("--record-every")) cfg["record_every"] = f.record_every;
  if (have("--state-every")) cfg["state_every"] = f.state_every;
  if (have("--init")) cfg["init"] = f.init;
  if (have("--dynamics")) cfg["dynamics"] = f.dynamics;
  if (have("--out")) cfg["out"] = f.out;
  if (have("--grid")) cfg["grid"] = f.grid;
  if (have("--mu0")) cfg["mu0"] = f.mu0;
  if (have("--mu1")) cfg["mu1"] = f.mu1;
  if (have("--K")) cfg["K"] = f.K;
  if (have("--iters")) cfg["iters"] = f.iters;
  if (have("--e-list")) cfg["e_list"] = f.e_list;
  if (have("--sample-every")) cfg["sample_every"] = f.sample_every;
  if (have("--eps0")) cfg["eps0"] = f.eps0;
  if (have("--perturbations")) cfg["perturbations"] = f.perturbations;
}

nlohmann::json gather_config(CLI::App* cmd, const FlagStore& f) {
  nlohmann::json cfg = f.config.empty() ? nlohmann::json::object()
                                        : load_config_file(f.config);
  merge_flags(cmd, f, cfg);
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"particle, collision and transport-metric laboratory"};
  app.require_subcommand(1);
  FlagStore f;

  CLI::App* agg = app.add_subcommand(
      "aggregate", "deterministic particle flow of the aggregation equation");
  add_common_options(agg, f);
  agg->add_option("--e", f.e, "restitution in [0,1]");
  agg->add_option("--n", f.n, "particle count");
  agg->add_option("--T", f.T, "time horizon");
  agg->add_option("--dt", f.dt, "time step");
  agg->add_option("--init", f.init, "normal|uniform|twopoint|file:PATH");
  agg->add_option("--dynamics", f.dynamics, "must be aggregate");
  agg->add_option("--record-every", f.record_every, "diagnostics thinning");
  agg->add_option("--state-every", f.state_every, "trajectory row thinning");

  CLI::App* bol = app.add_subcommand(
      "boltzmann", "stochastic collision runs of the inelastic equation");
  add_common_options(bol, f);
  bol->add_option("--e", f.e, "restitution in [0,1]");
  bol->add_option("--n", f.n, "particle count");
  bol->add_option("--T", f.T, "time horizon");
  bol->add_option("--dt", f.dt, "time step");
  bol->add_option("--init", f.init, "normal|uniform|twopoint|file:PATH");
  bol->add_option("--replicas", f.replicas, "independent runs");
  bol->add_option("--record-every", f.record_every, "diagnostics thinning");

  CLI::App* met = app.add_subcommand(
      "metric", "upper bound on the collision transport distance");
  add_common_options(met, f);
  met->add_option("--mu0", f.mu0, "start measure file (csv or json)");
  met->add_option("--mu1", f.mu1, "end measure file (csv or json)");
  met->add_option("--grid", f.grid, "vmin:vmax:m");
  met->add_option("--e", f.e, "restitution in [0,1]");
  met->add_option("--K", f.K, "path intervals");
  met->add_option("--iters", f.iters, "descent iterations");

  CLI::App* ver = app.add_subcommand("verify", "run a named experiment");
  std::string experiment;
  ver->add_option("experiment", experiment,
                  "haff|de_giorgi|taylor|compare|stability")
      ->required();
  add_common_options(ver, f);
  ver->add_option("--e", f.e, "restitution in [0,1]");
  ver->add_option("--n", f.n, "particle count / sample size");
  ver->add_option("--T", f.T, "time horizon");
  ver->add_option("--dt", f.dt, "time step");
  ver->add_option("--init", f.init, "normal|uniform|twopoint|file:PATH");
  ver->add_option("--dynamics", f.dynamics, "aggregate|boltzmann (haff)");
  ver->add_option("--replicas", f.replicas, "ensemble size (compare)");
  ver->add_option("--record-every", f.record_every, "diagnostics thinning");
  ver->add_option("--e-list", f.e_list, "restitution sweep");
  ver->add_option("--sample-every", f.sample_every, "distance sampling step");
  ver->add_option("--eps0", f.eps0, "largest perturbation (stability)");
  ver->add_option("--perturbations", f.perturbations, "ladder length (stability)");

  CLI::App* cmp = app.add_subcommand(
      "compare", "collision runs against the deterministic flow");
  add_common_options(cmp, f);
  cmp->add_option("--e-list", f.e_list, "restitution sweep");
  cmp->add_option("--n", f.n, "particle count");
  cmp->add_option("--T", f.T, "time horizon");
  cmp->add_option("--dt", f.dt, "time step");
  cmp->add_option("--init", f.init, "normal|uniform|twopoint|file:PATH");
  cmp->add_option("--replicas", f.replicas, "ensemble size");
  cmp->add_option("--sample-every", f.sample_every, "distance sampling step");

  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("gfl");
  for (const std::string& a : args) full.push_back(a);
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const std::string& a : full) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex);
    return code == 0 ? 0 : 2;
  }

  try {
    if (agg->parsed()) return cmd_aggregate(gather_config(agg, f), f.validate);
    if (bol->parsed()) return cmd_boltzmann(gather_config(bol, f), f.validate);
    if (met->parsed()) return cmd_metric(gather_config(met, f), f.validate);
    if (ver->parsed()) {
      nlohmann::json cfg = gather_config(ver, f);
      const std::string from_cfg = cfg_string(cfg, "experiment", experiment);
      if (from_cfg != experiment) {
        throw ConfigError("config key `experiment` (" + from_cfg +
                          ") contradicts the command line (" + experiment + ")");
      }
      return cmd_verify(experiment, cfg, f.validate);
    }
    if (cmp->parsed()) {
      nlohmann::json cfg = gather_config(cmp, f);
      cfg.erase("experiment");
      return cmd_verify("compare", cfg, f.validate);
    }
    throw ConfigError("no subcommand selected");
  } catch (const InfeasibleError& ex) {
    std::cerr << ex.what() << "\n";
    return 3;
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace gfl
