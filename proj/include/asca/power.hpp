#pragma once

// Monte Carlo power curves for a planned design and permutation plan.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "asca/coding.hpp"
#include "asca/design.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/inference.hpp"
#include "asca/io/csv.hpp"
#include "asca/prep.hpp"
#include "asca/random.hpp"

namespace asca {

/// Factor of a simulated design. For a nested factor `levels` counts the
/// levels within each level of its parent, which must be declared earlier.
struct FactorTemplate {
  std::string name;
  std::size_t levels = 2;
  FactorNature nature = FactorNature::fixed;
  std::optional<std::string> nested_in;
};

enum class NoiseModel { gaussian, heavy_tailed };
enum class GridAxis { effect_size, replicates };

inline GridAxis parse_grid_axis(std::string_view s) {
  if (s == "effect_size" || s == "theta") return GridAxis::effect_size;
  if (s == "replicates" || s == "n") return GridAxis::replicates;
  fail(ErrorKind::invalid_argument, "unknown grid axis '" + std::string(s) + "'");
}

struct SimulationScenario {
  std::vector<FactorTemplate> factors;
  std::string formula;
  std::size_t replicates = 2;                 // per full design cell
  std::map<std::string, double> effect_sizes;  // term name -> theta; absent terms are null
  std::size_t n_vars = 10;
  std::size_t n_datasets = 100;
  double alpha = 0.05;
  PermutationPlan plan;
  CodingScheme coding = CodingScheme::sum;
  PreprocessPlan preprocess;
  NoiseModel noise = NoiseModel::gaussian;
  /// effect_size: each grid value multiplies every theta. replicates: each
  /// grid value replaces `replicates`.
  GridAxis axis = GridAxis::effect_size;
  std::vector<double> grid{1.0};
  std::uint64_t seed = 1;
  std::optional<std::chrono::milliseconds> budget;

  void validate() const {
    if (factors.empty()) fail(ErrorKind::invalid_argument, "scenario has no factors");
    if (grid.empty()) fail(ErrorKind::invalid_argument, "power grid is empty");
    if (n_vars == 0 || n_datasets == 0) fail(ErrorKind::invalid_argument, "n_vars and n_datasets must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::invalid_argument, "significance level must lie in (0, 1)");
    for (const auto& [term, theta] : effect_sizes) {
      if (!(theta >= 0.0)) fail(ErrorKind::invalid_argument, "effect size of '" + term + "' must be nonnegative");
    }
    for (double g : grid) {
      if (!(g >= 0.0)) fail(ErrorKind::invalid_argument, "grid values must be nonnegative");
      if (axis == GridAxis::replicates && (g < 1.0 || g != std::floor(g))) {
        fail(ErrorKind::invalid_argument, "replicate grid values must be positive integers");
      }
    }
    plan.validate();
  }
};

struct SimulatedData {
  ResponseMatrix response;
  DesignSpec design;
};

namespace detail {

inline DesignSpec simulated_design(const SimulationScenario& s, std::size_t replicates) {
  const std::size_t nf = s.factors.size();
  std::vector<Factor> factors(nf);
  std::vector<std::optional<std::size_t>> parent(nf);
  std::vector<std::size_t> total(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& tpl = s.factors[f];
    if (tpl.levels < 1) fail(ErrorKind::invalid_argument, "factor '" + tpl.name + "' needs at least one level");
    factors[f].name = tpl.name;
    factors[f].nature = tpl.nature;
    factors[f].nested_in = tpl.nested_in;
    total[f] = tpl.levels;
    if (tpl.nested_in) {
      for (std::size_t g = 0; g < f; ++g) {
        if (s.factors[g].name == *tpl.nested_in) parent[f] = g;
      }
      if (!parent[f]) fail(ErrorKind::invalid_design, "parent of '" + tpl.name + "' must be declared before it");
      total[f] = tpl.levels * total[*parent[f]];
    }
    for (std::size_t l = 0; l < total[f]; ++l) factors[f].levels.push_back(tpl.name + std::to_string(l + 1));
  }
  // Odometer over local level indices, last factor fastest.
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<std::size_t> local(nf, 0);
  while (true) {
    std::vector<std::size_t> global(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      global[f] = parent[f] ? global[*parent[f]] * s.factors[f].levels + local[f] : local[f];
    }
    for (std::size_t r = 0; r < replicates; ++r) assignments.push_back(global);
    std::size_t f = nf;
    while (f > 0) {
      --f;
      if (++local[f] < s.factors[f].levels) break;
      local[f] = 0;
      if (f == 0) {
        f = nf + 1;
        break;
      }
    }
    if (f == nf + 1) break;
  }
  auto terms = parse_model_formula(s.formula, factors);
  return DesignSpec::create(std::move(factors), std::move(terms), assignments);
}

}  // namespace detail

/// One dataset: Y = sum_t theta_t * M_t + noise, where M_t = X_t * B with
/// standard Gaussian B, scaled to unit Frobenius norm, so it is constant
/// within the term's cells and theta_t^2 is its sum of squares. The stream
/// is keyed by (seed, grid index, dataset index).
inline SimulatedData simulate_dataset(const SimulationScenario& s, std::size_t grid_index, std::size_t dataset) {
  if (grid_index >= s.grid.size()) fail(ErrorKind::invalid_argument, "grid index out of range");
  const double g = s.grid[grid_index];
  const std::size_t replicates = s.axis == GridAxis::replicates ? static_cast<std::size_t>(g) : s.replicates;
  const double multiplier = s.axis == GridAxis::effect_size ? g : 1.0;
  DesignSpec spec = detail::simulated_design(s, replicates);
  for (const auto& [name, theta] : s.effect_sizes) (void)spec.term_index(name);

  const ModelMatrix X = build_model_matrix(spec, CodingScheme::sum);
  auto engine = keyed_engine(s.seed, {static_cast<std::uint64_t>(grid_index), static_cast<std::uint64_t>(dataset)});
  std::normal_distribution<double> normal;
  std::student_t_distribution<double> heavy(3.0);
  const auto n = static_cast<Eigen::Index>(spec.n_samples());
  const auto p = static_cast<Eigen::Index>(s.n_vars);

  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, p);
  for (std::size_t t = 1; t < spec.terms().size(); ++t) {
    const auto it = s.effect_sizes.find(spec.term_name(spec.terms()[t]));
    const double theta = it == s.effect_sizes.end() ? 0.0 : it->second * multiplier;
    const auto cols = X.term_columns(t);
    Eigen::MatrixXd beta(cols.cols(), p);
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < beta.rows(); ++i) beta(i, j) = normal(engine);
    }
    if (theta == 0.0) continue;
    Eigen::MatrixXd pattern = cols * beta;
    const double norm = pattern.norm();
    if (norm > 0.0) y += (theta / norm) * pattern;
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i, j) += s.noise == NoiseModel::gaussian ? normal(engine) : heavy(engine) / std::sqrt(3.0);
    }
  }
  ResponseMatrix response = ResponseMatrix::from(std::move(y));
  response.sample_ids = spec.sample_ids();
  return {std::move(response), std::move(spec)};
}

struct PowerCurve {
  GridAxis axis = GridAxis::effect_size;
  std::vector<double> grid;
  std::vector<std::string> terms;
  std::vector<std::vector<double>> power;     // [grid][term]
  std::vector<std::vector<double>> stderrs;   // binomial standard error
  std::vector<bool> completed;                // false when the budget ran out first
  std::size_t n_datasets = 0;
};

inline double binomial_se(double fraction, std::size_t n) {
  return std::sqrt(fraction * (1.0 - fraction) / static_cast<double>(n));
}

/// Runs preprocessing, fit and permutation test on every simulated dataset of
/// every grid point. Datasets run in parallel; each permutation test uses one
/// thread so results are independent of the thread count.
inline PowerCurve power_curve(const SimulationScenario& s) {
  s.validate();
  const auto start = std::chrono::steady_clock::now();
  PowerCurve curve;
  curve.axis = s.axis;
  curve.grid = s.grid;
  curve.n_datasets = s.n_datasets;
  {
    const SimulatedData probe = simulate_dataset(s, 0, 0);
    for (std::size_t t = 1; t < probe.design.terms().size(); ++t) {
      curve.terms.push_back(probe.design.term_name(probe.design.terms()[t]));
    }
  }
  const std::size_t n_terms = curve.terms.size();
  PermutationPlan plan = s.plan;
  plan.threads = 1;

  for (std::size_t g = 0; g < s.grid.size(); ++g) {
    curve.power.emplace_back(n_terms, std::numeric_limits<double>::quiet_NaN());
    curve.stderrs.emplace_back(n_terms, std::numeric_limits<double>::quiet_NaN());
    if (s.budget && std::chrono::steady_clock::now() - start > *s.budget) {
      curve.completed.push_back(false);
      continue;
    }
    std::vector<std::vector<char>> rejected(s.n_datasets, std::vector<char>(n_terms, 0));
    detail::parallel_for(s.n_datasets, s.plan.threads, [&](std::size_t k) {
      const SimulatedData data = simulate_dataset(s, g, k);
      const RawResponseMatrix raw = RawResponseMatrix::from(data.response);
      const PreprocessResult prepped = preprocess(raw, data.design, s.preprocess);
      const ModelMatrix X = build_model_matrix(prepped.design, s.coding);
      PermutationPlan local = plan;
      local.seed = stream_key(s.seed, {0x706f776572ULL, g, k});
      const PermutationResult r = permutation_test(local, prepped.design, X, prepped.data);
      for (std::size_t t = 0; t < n_terms; ++t) rejected[k][t] = r.p_values[t + 1] <= s.alpha ? 1 : 0;
    });
    for (std::size_t t = 0; t < n_terms; ++t) {
      std::size_t count = 0;
      for (const auto& row : rejected) count += static_cast<std::size_t>(row[t]);
      const double f = static_cast<double>(count) / static_cast<double>(s.n_datasets);
      curve.power[g][t] = f;
      curve.stderrs[g][t] = binomial_se(f, s.n_datasets);
    }
    curve.completed.push_back(true);
  }
  return curve;
}

inline std::string to_csv(const PowerCurve& curve) {
  std::ostringstream out;
  io::CsvWriter w(out);
  w.row({curve.axis == GridAxis::effect_size ? "effect_size" : "replicates", "term", "power", "stderr", "completed"});
  for (std::size_t g = 0; g < curve.grid.size(); ++g) {
    for (std::size_t t = 0; t < curve.terms.size(); ++t) {
      w.row({io::format_double(curve.grid[g]), curve.terms[t], io::format_double(curve.power[g][t]),
             io::format_double(curve.stderrs[g][t]), curve.completed[g] ? "true" : "false"});
    }
  }
  return out.str();
}

}  // namespace asca
