#include "gfl/measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gfl/compensated.hpp"
#include "gfl/errors.hpp"
#include "gfl/io.hpp"
#include "gfl/rng.hpp"

namespace gfl {

namespace {

constexpr double kWeightSumTol = 1e-12;
constexpr double kMergeRelTol = 1e-14;

void validate_atoms(const std::vector<Atom>& atoms) {
  if (atoms.empty()) throw ConfigError("measure must have at least one atom");
  CompensatedSum wsum;
  for (const Atom& a : atoms) {
    if (!std::isfinite(a.position)) {
      throw ConfigError("measure position is not finite");
    }
    if (!(a.weight >= 0.0)) {
      throw ConfigError("measure weights must be nonnegative");
    }
    wsum.add(a.weight);
  }
  if (std::abs(wsum.value() - 1.0) > kWeightSumTol) {
    throw ConfigError("measure weights must sum to 1 (got " +
                      format_double(wsum.value()) + ")");
  }
  for (std::size_t i = 1; i < atoms.size(); ++i) {
    if (!(atoms[i - 1].position < atoms[i].position)) {
      throw ConfigError("measure positions must be strictly increasing");
    }
  }
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(MeasureKind kind, std::vector<Atom> atoms,
                                 std::optional<GridSpec> grid)
    : kind_(kind), atoms_(std::move(atoms)), grid_(std::move(grid)) {
  validate_atoms(atoms_);
}

DiscreteMeasure DiscreteMeasure::empirical(std::vector<double> positions,
                                           std::vector<double> weights) {
  if (positions.size() != weights.size()) {
    throw ConfigError("positions and weights must have equal length");
  }
  if (positions.empty()) throw ConfigError("measure must have at least one atom");
  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return positions[a] < positions[b];
  });
  for (double v : positions) {
    if (!std::isfinite(v)) throw ConfigError("measure position is not finite");
  }
  const double span = positions[order.back()] - positions[order.front()];
  const double merge_dist = kMergeRelTol * span;

  std::vector<Atom> atoms;
  atoms.reserve(positions.size());
  for (std::size_t idx : order) {
    const double v = positions[idx];
    const double w = weights[idx];
    if (!atoms.empty() && v - atoms.back().position <= merge_dist) {
      atoms.back().weight += w;
    } else {
      atoms.push_back({v, w});
    }
  }
  return DiscreteMeasure(MeasureKind::empirical, std::move(atoms), std::nullopt);
}

DiscreteMeasure DiscreteMeasure::empirical_equal(
    const std::vector<double>& positions) {
  return empirical(positions,
                   std::vector<double>(positions.size(),
                                       1.0 / static_cast<double>(positions.size())));
}

DiscreteMeasure DiscreteMeasure::grid(const GridSpec& spec,
                                      std::vector<double> masses) {
  if (spec.m < 2) throw ConfigError("grid must have at least 2 nodes");
  if (!(spec.v_min < spec.v_max)) throw ConfigError("grid requires v_min < v_max");
  if (masses.size() != static_cast<std::size_t>(spec.m)) {
    throw ConfigError("grid measure needs one mass per node");
  }
  std::vector<Atom> atoms(masses.size());
  for (int k = 0; k < spec.m; ++k) {
    atoms[k] = {spec.node(k), masses[k]};
  }
  return DiscreteMeasure(MeasureKind::grid, std::move(atoms), spec);
}

std::vector<double> DiscreteMeasure::positions() const {
  std::vector<double> out(atoms_.size());
  for (std::size_t i = 0; i < atoms_.size(); ++i) out[i] = atoms_[i].position;
  return out;
}

std::vector<double> DiscreteMeasure::weights() const {
  std::vector<double> out(atoms_.size());
  for (std::size_t i = 0; i < atoms_.size(); ++i) out[i] = atoms_[i].weight;
  return out;
}

bool DiscreteMeasure::same_support(const DiscreteMeasure& o) const {
  if (atoms_.size() != o.atoms_.size()) return false;
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (atoms_[i].position != o.atoms_[i].position) return false;
  }
  return true;
}

double moment(const DiscreteMeasure& f, double p) {
  if (p < 0.0) throw ConfigError("moment order must be nonnegative");
  CompensatedSum s;
  for (const Atom& a : f.atoms()) {
    const double av = std::abs(a.position);
    double term;
    if (p == 0.0) {
      term = a.weight;
    } else if (p == 1.0) {
      term = a.weight * av;
    } else if (p == 2.0) {
      term = a.weight * av * av;
    } else if (p == 3.0) {
      term = a.weight * av * av * av;
    } else {
      term = a.weight * std::pow(av, p);
    }
    s.add(term);
  }
  return s.value();
}

double mean(const DiscreteMeasure& f) {
  CompensatedSum s;
  for (const Atom& a : f.atoms()) s.add(a.weight * a.position);
  return s.value();
}

double wasserstein(const DiscreteMeasure& f, const DiscreteMeasure& g, int p) {
  if (p != 1 && p != 2) {
    throw ConfigError("wasserstein order must be 1 or 2");
  }
  // Walk both CDFs; every quantile segment couples one f-atom to one g-atom.
  const auto& fa = f.atoms();
  const auto& ga = g.atoms();
  std::size_t i = 0, j = 0;
  double rem_f = fa[0].weight, rem_g = ga[0].weight;
  CompensatedSum cost;
  while (true) {
    if (rem_f <= 0.0) {
      if (++i >= fa.size()) break;
      rem_f = fa[i].weight;
      continue;
    }
    if (rem_g <= 0.0) {
      if (++j >= ga.size()) break;
      rem_g = ga[j].weight;
      continue;
    }
    const double d = std::min(rem_f, rem_g);
    const double gap = std::abs(fa[i].position - ga[j].position);
    cost.add(d * (p == 1 ? gap : gap * gap));
    rem_f -= d;
    rem_g -= d;
  }
  const double c = cost.value();
  return p == 1 ? c : std::sqrt(std::max(0.0, c));
}

DiscreteMeasure sample_from_density(const std::function<double(double)>& density,
                                    double lo, double hi, std::size_t n,
                                    std::uint64_t seed, bool recenter_mean) {
  if (!(lo < hi)) throw ConfigError("sample_from_density requires lo < hi");
  if (n == 0) throw ConfigError("sample_from_density requires n >= 1");

  constexpr int kCells = 4096;
  const double dx = (hi - lo) / kCells;
  std::vector<double> dens(kCells + 1);
  double dmax = 0.0;
  for (int k = 0; k <= kCells; ++k) {
    double d = density(lo + k * dx);
    if (!std::isfinite(d)) throw ConfigError("density evaluated to a non-finite value");
    dmax = std::max(dmax, d);
    dens[k] = d;
  }
  for (double& d : dens) {
    if (d < 0.0) {
      if (d < -1e-12 * std::max(1.0, dmax)) {
        throw ConfigError("density must be nonnegative");
      }
      d = 0.0;
    }
  }
  std::vector<double> cum(kCells + 1, 0.0);
  for (int k = 0; k < kCells; ++k) {
    cum[k + 1] = cum[k] + 0.5 * (dens[k] + dens[k + 1]) * dx;
  }
  const double total = cum[kCells];
  if (!(total > 0.0)) {
    throw ConfigError("degenerate density: zero total mass on [lo, hi]");
  }

  Rng rng(seed);
  std::vector<double> v(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double u = rng.uniform() * total;
    // First cell whose upper cumulative exceeds u.
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    int k = static_cast<int>(std::min<std::ptrdiff_t>(
        std::max<std::ptrdiff_t>(it - cum.begin() - 1, 0), kCells - 1));
    while (k < kCells - 1 && cum[k + 1] <= u) ++k;
    const double cell = cum[k + 1] - cum[k];
    const double frac = cell > 0.0 ? (u - cum[k]) / cell : 0.5;
    v[s] = lo + (k + std::min(std::max(frac, 0.0), 1.0)) * dx;
  }

  if (recenter_mean) {
    std::sort(v.begin(), v.end());
    const double w = 1.0 / static_cast<double>(n);
    auto weighted_mean = [&]() {
      CompensatedSum s;
      for (double x : v) s.add(w * x);
      return s.value();
    };
    const double mu = weighted_mean();
    for (double& x : v) x -= mu;
    // Fold the summation residual into the last atom until it vanishes.
    for (int pass = 0; pass < 8; ++pass) {
      const double r = weighted_mean();
      if (r == 0.0) break;
      v.back() -= r * static_cast<double>(n);
    }
  }
  return DiscreteMeasure::empirical_equal(v);
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// --- CSV ----------------------------------------------------------------

std::string measure_to_csv(const DiscreteMeasure& f) {
  std::string out = "position,weight\n";
  for (const Atom& a : f.atoms()) {
    out += format_double(a.position);
    out += ',';
    out += format_double(a.weight);
    out += '\n';
  }
  return out;
}

namespace {

double parse_full_double(const std::string& field, int line_no) {
  const char* s = field.c_str();
  char* end = nullptr;
  const double x = std::strtod(s, &end);
  if (end == s || *end != '\0') {
    throw ConfigError("CSV line " + std::to_string(line_no) +
                      ": cannot parse number '" + field + "'");
  }
  return x;
}

}  // namespace

DiscreteMeasure measure_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<double> pos, w;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "position,weight") {
        throw ConfigError("CSV header must be 'position,weight'");
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ConfigError("CSV line " + std::to_string(line_no) +
                        ": expected 'position,weight'");
    }
    pos.push_back(parse_full_double(line.substr(0, comma), line_no));
    w.push_back(parse_full_double(line.substr(comma + 1), line_no));
  }
  if (pos.empty()) throw ConfigError("CSV contains no atoms");
  return DiscreteMeasure::empirical(std::move(pos), std::move(w));
}

// --- JSON ---------------------------------------------------------------

std::string measure_to_json(const DiscreteMeasure& f) {
  // Written by hand so every double carries 17 significant digits.
  std::string out = "{\n  \"kind\": \"";
  out += (f.kind() == MeasureKind::grid ? "grid" : "empirical");
  out += "\",\n";
  if (f.kind() == MeasureKind::grid) {
    const GridSpec& g = *f.grid_spec();
    out += "  \"grid\": {\"v_min\": " + format_double(g.v_min) +
           ", \"v_max\": " + format_double(g.v_max) +
           ", \"m\": " + std::to_string(g.m) + "},\n";
  }
  out += "  \"atoms\": [\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    out += "    [" + format_double(f.position(i)) + ", " +
           format_double(f.weight(i)) + "]";
    out += (i + 1 < f.size() ? ",\n" : "\n");
  }
  out += "  ]\n}\n";
  return out;
}

DiscreteMeasure measure_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid measure JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("kind") || !j.contains("atoms")) {
    throw ConfigError("measure JSON needs 'kind' and 'atoms'");
  }
  const std::string kind = j["kind"].get<std::string>();
  std::vector<double> pos, w;
  for (const auto& a : j["atoms"]) {
    if (!a.is_array() || a.size() != 2) {
      throw ConfigError("measure JSON atoms must be [position, weight] pairs");
    }
    pos.push_back(a[0].get<double>());
    w.push_back(a[1].get<double>());
  }
  if (kind == "empirical") {
    return DiscreteMeasure::empirical(std::move(pos), std::move(w));
  }
  if (kind == "grid") {
    if (!j.contains("grid")) {
      throw ConfigError("grid measure JSON needs a 'grid' block");
    }
    GridSpec spec;
    spec.v_min = j["grid"].at("v_min").get<double>();
    spec.v_max = j["grid"].at("v_max").get<double>();
    spec.m = j["grid"].at("m").get<int>();
    if (pos.size() != static_cast<std::size_t>(spec.m)) {
      throw ConfigError("grid measure JSON atom count does not match m");
    }
    for (int k = 0; k < spec.m; ++k) {
      if (pos[k] != spec.node(k)) {
        throw ConfigError("grid measure JSON positions do not lie on the grid");
      }
    }
    return DiscreteMeasure::grid(spec, std::move(w));
  }
  throw ConfigError("unknown measure kind '" + kind + "'");
}

void save_measure(const DiscreteMeasure& f, const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".csv") {
    write_text_file_atomic(path, measure_to_csv(f));
  } else if (ext == ".json") {
    write_text_file_atomic(path, measure_to_json(f));
  } else {
    throw ConfigError("unsupported measure file extension '" + ext +
                      "' (use .csv or .json)");
  }
}

DiscreteMeasure load_measure(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  const std::string text = read_text_file(path);
  if (ext == ".csv") return measure_from_csv(text);
  if (ext == ".json") return measure_from_json(text);
  throw ConfigError("unsupported measure file extension '" + ext +
                    "' (use .csv or .json)");
}

// --- file helpers -------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void write_atomic_impl(const std::filesystem::path& path, const char* data,
                       std::size_t size) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(data, static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() +
                  "': " + ec.message());
  }
}

}  // namespace

void write_text_file_atomic(const std::filesystem::path& path,
                            const std::string& content) {
  write_atomic_impl(path, content.data(), content.size());
}

void write_binary_file_atomic(const std::filesystem::path& path,
                              const std::vector<unsigned char>& data) {
  write_atomic_impl(path, reinterpret_cast<const char*>(data.data()),
                    data.size());
}

}  // namespace gfl
