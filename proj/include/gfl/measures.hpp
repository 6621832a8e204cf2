#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gfl {

struct Atom {
  double position;
  double weight;
};

enum class MeasureKind { empirical, grid };

// Uniform velocity grid with m nodes spanning [v_min, v_max].
struct GridSpec {
  double v_min = -1.0;
  double v_max = 1.0;
  int m = 2;

  double h() const { return (v_max - v_min) / (m - 1); }
  // All grid positions are produced by this one expression so that stored and
  // recomputed node coordinates agree bitwise.
  double node(int k) const { return v_min + k * h(); }
  bool operator==(const GridSpec& o) const {
    return v_min == o.v_min && v_max == o.v_max && m == o.m;
  }
};

// A probability measure with finitely many atoms on the velocity line.
// Invariants: weights are nonnegative and sum to 1 (within 1e-12); positions
// are strictly increasing.  Empirical measures are sorted on construction and
// atoms closer than 1e-14 times the position span are merged (weights added).
// Grid measures keep one atom per node, including zero-mass nodes.
class DiscreteMeasure {
 public:
  static DiscreteMeasure empirical(std::vector<double> positions,
                                   std::vector<double> weights);
  // Equal weights 1/n.
  static DiscreteMeasure empirical_equal(const std::vector<double>& positions);
  static DiscreteMeasure grid(const GridSpec& spec, std::vector<double> masses);

  MeasureKind kind() const { return kind_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  std::size_t size() const { return atoms_.size(); }
  double position(std::size_t i) const { return atoms_[i].position; }
  double weight(std::size_t i) const { return atoms_[i].weight; }
  const std::optional<GridSpec>& grid_spec() const { return grid_; }

  std::vector<double> positions() const;
  std::vector<double> weights() const;

  bool same_support(const DiscreteMeasure& o) const;

 private:
  DiscreteMeasure(MeasureKind kind, std::vector<Atom> atoms,
                  std::optional<GridSpec> grid);

  MeasureKind kind_;
  std::vector<Atom> atoms_;
  std::optional<GridSpec> grid_;
};

// p-th absolute moment  sum_i w_i |v_i|^p  (p >= 0).
double moment(const DiscreteMeasure& f, double p);

// Signed first moment sum_i w_i v_i.
double mean(const DiscreteMeasure& f);

// Exact 1-D Wasserstein distance for p in {1, 2} via the merged quantile
// decomposition of the two CDFs.
double wasserstein(const DiscreteMeasure& f, const DiscreteMeasure& g, int p);

// Draw n equal-weight atoms from an (unnormalized) density on [lo, hi] by
// inverting a piecewise-linear CDF built on a fine quadrature grid.  With
// recenter_mean the sample is shifted to zero mean and the residual round-off
// is folded into single-atom corrections until the weighted mean is exactly 0.
// A density that vanishes identically on [lo, hi] is an error.
DiscreteMeasure sample_from_density(const std::function<double(double)>& density,
                                    double lo, double hi, std::size_t n,
                                    std::uint64_t seed,
                                    bool recenter_mean = false);

// --- serialization ------------------------------------------------------
// All floating-point values are written with 17 significant digits, so a
// save/load round trip reproduces every double bit for bit.

// CSV: header "position,weight", one atom per row.  CSV does not carry the
// measure kind; loading yields an empirical measure.
std::string measure_to_csv(const DiscreteMeasure& f);
DiscreteMeasure measure_from_csv(const std::string& text);

// JSON: {"kind": "...", "atoms": [[position, weight], ...]}; grid measures
// additionally carry {"grid": {"v_min":..., "v_max":..., "m":...}}.
std::string measure_to_json(const DiscreteMeasure& f);
DiscreteMeasure measure_from_json(const std::string& text);

// Dispatch on extension: .csv or .json.
void save_measure(const DiscreteMeasure& f, const std::filesystem::path& path);
DiscreteMeasure load_measure(const std::filesystem::path& path);

// Shortest-exact decimal formatting used across all text outputs.
std::string format_double(double x);

}  // namespace gfl
