#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfl/measures.hpp"

namespace gfl {

// Recipe for the initial particle velocities of a simulation run.
//
// Config form: either a plain string ("normal", "uniform", "twopoint",
// "file:PATH") or an object {"name": ..., "mean": ..., "scale": ...,
// "path": ...}.  `scale` is the standard deviation for "normal", the
// half-width for "uniform" and half the gap for "twopoint".
struct InitSpec {
  std::string name = "normal";  // normal | uniform | twopoint | file
  double mean = 0.0;
  double scale = 1.0;
  std::string path;  // only for name == "file"
};

InitSpec parse_init(const nlohmann::json& value);

// Sampled velocities for a run.  Random draws come from a dedicated stream
// derived from `seed`, and sampled families (normal, uniform) are shifted so
// the empirical mean equals `mean` exactly: the mean is a conserved quantity
// of both dynamics, so runs should start from the configured value, not the
// configured value plus sampling noise.
//
// For name == "file" the measure is loaded (CSV or JSON by extension), must
// carry equal weights, and its atom count must match `n` unless n == 0.
std::vector<double> build_velocities(const InitSpec& init, std::size_t n,
                                     std::uint64_t seed);

// Parses a JSON config file; the top level must be an object.
nlohmann::json load_config_file(const std::string& path);

// Strict key whitelist: any key outside `allowed` raises ConfigError naming
// the key.
void reject_unknown_keys(const nlohmann::json& cfg,
                         const std::vector<std::string>& allowed);

// Typed accessors; every failure names the offending key.
bool cfg_has(const nlohmann::json& cfg, const std::string& key);
double cfg_real(const nlohmann::json& cfg, const std::string& key,
                double fallback);
std::int64_t cfg_int(const nlohmann::json& cfg, const std::string& key,
                     std::int64_t fallback);
std::string cfg_string(const nlohmann::json& cfg, const std::string& key,
                       const std::string& fallback);
std::vector<double> cfg_real_list(const nlohmann::json& cfg,
                                  const std::string& key,
                                  const std::vector<double>& fallback);

// "vmin:vmax:m" (e.g. "-1:1:41"); failures name `grid`.
GridSpec parse_grid_string(const std::string& text);

// Shared validations; each failure names the key it checks.
double validate_e(double e);
double validate_dt(double dt);
double validate_T(double T);
std::size_t validate_n(std::int64_t n);

}  // namespace gfl
