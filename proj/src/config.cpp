#include "gfl/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "gfl/errors.hpp"
#include "gfl/io.hpp"
#include "gfl/rng.hpp"

namespace gfl {
namespace {

// Stream tag for initial-condition sampling, far away from the small replica
// indices used elsewhere so the streams never collide.
constexpr std::uint64_t kInitStream = 0x696e6974;  // "init"

std::string fmt_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

[[noreturn]] void bad_key(const std::string& key, const std::string& expected) {
  throw ConfigError("config key `" + key + "` must be " + expected);
}

}  // namespace

InitSpec parse_init(const nlohmann::json& value) {
  InitSpec spec;
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    if (s.rfind("file:", 0) == 0) {
      spec.name = "file";
      spec.path = s.substr(5);
      if (spec.path.empty()) {
        throw ConfigError("config key `init`: file form needs a path after \"file:\"");
      }
    } else {
      spec.name = s;
    }
  } else if (value.is_object()) {
    for (const auto& [key, sub] : value.items()) {
      if (key == "name") {
        if (!sub.is_string()) bad_key("init.name", "a string");
        spec.name = sub.get<std::string>();
      } else if (key == "mean") {
        if (!sub.is_number()) bad_key("init.mean", "a number");
        spec.mean = sub.get<double>();
      } else if (key == "scale") {
        if (!sub.is_number()) bad_key("init.scale", "a number");
        spec.scale = sub.get<double>();
      } else if (key == "path") {
        if (!sub.is_string()) bad_key("init.path", "a string");
        spec.path = sub.get<std::string>();
      } else {
        throw ConfigError("unknown config key `init." + key + "`");
      }
    }
  } else {
    bad_key("init", "a string or an object");
  }

  if (spec.name != "normal" && spec.name != "uniform" &&
      spec.name != "twopoint" && spec.name != "file") {
    throw ConfigError(
        "config key `init` must name one of normal, uniform, twopoint, file");
  }
  if (spec.name == "file" && spec.path.empty()) {
    throw ConfigError("config key `init`: file form needs `path`");
  }
  if (spec.name != "file" && !(spec.scale > 0.0) ) {
    throw ConfigError("config key `init.scale` must be positive");
  }
  return spec;
}

std::vector<double> build_velocities(const InitSpec& init, std::size_t n,
                                     std::uint64_t seed) {
  if (init.name == "file") {
    if (!std::filesystem::exists(init.path)) {
      throw ConfigError("config key `init`: file does not exist: " + init.path);
    }
    const std::string text = read_text_file(init.path);
    DiscreteMeasure f =
        std::filesystem::path(init.path).extension() == ".json"
            ? measure_from_json(text)
            : measure_from_csv(text);
    const std::size_t count = f.size();
    if (count == 0) {
      throw ConfigError("config key `init`: file holds an empty measure");
    }
    if (n != 0 && n != count) {
      throw ConfigError("config key `n` (= " + std::to_string(n) +
                        ") does not match the " + std::to_string(count) +
                        " atoms in the init file");
    }
    const double w = 1.0 / static_cast<double>(count);
    std::vector<double> v;
    v.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (std::abs(f.weight(i) - w) > 1e-9 * w) {
        throw ConfigError(
            "config key `init`: particle runs need equal weights; atom " +
            std::to_string(i) + " carries " + fmt_real(f.weight(i)) +
            " instead of 1/n");
      }
      v.push_back(f.position(i));
    }
    return v;
  }

  if (n == 0) throw ConfigError("config key `n` must be positive");
  std::vector<double> v(n);
  Rng rng(derive_seed(seed, kInitStream));
  if (init.name == "normal") {
    for (double& x : v) x = init.scale * rng.normal();
  } else if (init.name == "uniform") {
    for (double& x : v) x = init.scale * (2.0 * rng.uniform() - 1.0);
  } else {  // twopoint
    if (n % 2 != 0) {
      throw ConfigError("config key `n` must be even for a twopoint init");
    }
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = (i < n / 2) ? -init.scale : init.scale;
    }
  }
  // Pin the empirical mean to the configured value exactly; the mean is
  // conserved by the dynamics, so it should not inherit sampling noise.
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  for (double& x : v) x += init.mean - mean;
  return v;
}

nlohmann::json load_config_file(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file does not exist: " + path);
  }
  const std::string text = read_text_file(path);
  nlohmann::json cfg = nlohmann::json::parse(text, nullptr, false);
  if (cfg.is_discarded()) {
    throw ConfigError("config file is not valid JSON: " + path);
  }
  if (!cfg.is_object()) {
    throw ConfigError("config file must hold a JSON object: " + path);
  }
  return cfg;
}

void reject_unknown_keys(const nlohmann::json& cfg,
                         const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : cfg.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown config key `" + key + "`");
    }
  }
}

bool cfg_has(const nlohmann::json& cfg, const std::string& key) {
  return cfg.contains(key);
}

double cfg_real(const nlohmann::json& cfg, const std::string& key,
                double fallback) {
  if (!cfg.contains(key)) return fallback;
  if (!cfg.at(key).is_number()) bad_key(key, "a number");
  return cfg.at(key).get<double>();
}

std::int64_t cfg_int(const nlohmann::json& cfg, const std::string& key,
                     std::int64_t fallback) {
  if (!cfg.contains(key)) return fallback;
  const nlohmann::json& v = cfg.at(key);
  if (!v.is_number_integer()) bad_key(key, "an integer");
  return v.get<std::int64_t>();
}

std::string cfg_string(const nlohmann::json& cfg, const std::string& key,
                       const std::string& fallback) {
  if (!cfg.contains(key)) return fallback;
  if (!cfg.at(key).is_string()) bad_key(key, "a string");
  return cfg.at(key).get<std::string>();
}

std::vector<double> cfg_real_list(const nlohmann::json& cfg,
                                  const std::string& key,
                                  const std::vector<double>& fallback) {
  if (!cfg.contains(key)) return fallback;
  const nlohmann::json& v = cfg.at(key);
  if (!v.is_array()) bad_key(key, "an array of numbers");
  std::vector<double> out;
  for (const nlohmann::json& item : v) {
    if (!item.is_number()) bad_key(key, "an array of numbers");
    out.push_back(item.get<double>());
  }
  return out;
}

GridSpec parse_grid_string(const std::string& text) {
  const std::size_t c1 = text.find(':');
  const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                 : text.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw ConfigError("config key `grid` must look like vmin:vmax:m, got \"" +
                      text + "\"");
  }
  GridSpec spec;
  try {
    std::size_t used = 0;
    spec.v_min = std::stod(text.substr(0, c1), &used);
    if (used != c1) throw std::invalid_argument("trailing junk");
    const std::string mid = text.substr(c1 + 1, c2 - c1 - 1);
    spec.v_max = std::stod(mid, &used);
    if (used != mid.size()) throw std::invalid_argument("trailing junk");
    const std::string tail = text.substr(c2 + 1);
    const long long m = std::stoll(tail, &used);
    if (used != tail.size()) throw std::invalid_argument("trailing junk");
    if (m < 2 || m > 1000000) throw std::invalid_argument("m out of range");
    spec.m = static_cast<int>(m);
  } catch (const std::exception&) {
    throw ConfigError("config key `grid` must look like vmin:vmax:m, got \"" +
                      text + "\"");
  }
  if (!(spec.v_min < spec.v_max)) {
    throw ConfigError("config key `grid`: vmin must be below vmax");
  }
  return spec;
}

double validate_e(double e) {
  if (!(e >= 0.0 && e <= 1.0)) {
    throw ConfigError("config key `e` must lie in [0, 1], got " + fmt_real(e));
  }
  return e;
}

double validate_dt(double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ConfigError("config key `dt` must be positive, got " + fmt_real(dt));
  }
  return dt;
}

double validate_T(double T) {
  if (!(T >= 0.0) || !std::isfinite(T)) {
    throw ConfigError("config key `T` must be nonnegative, got " + fmt_real(T));
  }
  return T;
}

std::size_t validate_n(std::int64_t n) {
  if (n < 1) {
    throw ConfigError("config key `n` must be positive, got " +
                      std::to_string(n));
  }
  return static_cast<std::size_t>(n);
}

}  // namespace gfl
