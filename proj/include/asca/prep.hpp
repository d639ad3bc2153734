#pragma once

// Data curation and preprocessing: missing values, element-wise transforms,
// column scaling and PCA-based anomaly diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "asca/design.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/io/csv.hpp"
#include "asca/pca.hpp"

namespace asca {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Response values with explicit missing markers. Zeros and below-detection
/// values are observations, never missing.
struct RawResponseMatrix {
  Eigen::MatrixXd values;
  BoolMatrix missing;
  std::vector<std::string> variables;
  std::vector<std::string> sample_ids;

  std::size_t n_samples() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_vars() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t missing_count() const { return static_cast<std::size_t>(missing.count()); }

  static RawResponseMatrix from(const ResponseMatrix& y) {
    RawResponseMatrix raw;
    raw.values = y.values;
    raw.missing = BoolMatrix::Constant(y.values.rows(), y.values.cols(), false);
    raw.variables = y.variables;
    raw.sample_ids = y.sample_ids;
    return raw;
  }

  /// First column: sample id; remaining columns: variables. `NA` marks missing.
  static RawResponseMatrix from_csv(const io::CsvTable& csv, std::string_view source = "data") {
    if (csv.header.size() < 2) fail(ErrorKind::io, std::string(source) + ": needs a sample id column and at least one variable");
    RawResponseMatrix raw;
    const auto n = static_cast<Eigen::Index>(csv.rows.size());
    const auto p = static_cast<Eigen::Index>(csv.header.size() - 1);
    raw.values = Eigen::MatrixXd::Zero(n, p);
    raw.missing = BoolMatrix::Constant(n, p, false);
    raw.variables.assign(csv.header.begin() + 1, csv.header.end());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = csv.rows[static_cast<std::size_t>(i)];
      raw.sample_ids.push_back(row[0]);
      for (Eigen::Index j = 0; j < p; ++j) {
        const std::string& cell = row[static_cast<std::size_t>(j + 1)];
        if (cell == "NA") {
          raw.missing(i, j) = true;
          continue;
        }
        double v = 0.0;
        if (!io::parse_double(cell, v) || !std::isfinite(v)) {
          fail(ErrorKind::io, std::string(source) + ": line " + std::to_string(csv.line_numbers[static_cast<std::size_t>(i)]) +
                                  ", column '" + raw.variables[static_cast<std::size_t>(j)] + "': '" + cell +
                                  "' is not a number");
        }
        raw.values(i, j) = v;
      }
    }
    return raw;
  }
};

enum class ImputeMethod { drop_rows, drop_cols, unconditional_mean, cell_mean };

inline ImputeMethod parse_impute(std::string_view s) {
  if (s == "drop_rows") return ImputeMethod::drop_rows;
  if (s == "drop_cols") return ImputeMethod::drop_cols;
  if (s == "mean" || s == "unconditional_mean") return ImputeMethod::unconditional_mean;
  if (s == "cell_mean") return ImputeMethod::cell_mean;
  fail(ErrorKind::invalid_argument, "unknown imputation method '" + std::string(s) + "'");
}

struct ImputeOptions {
  ImputeMethod method = ImputeMethod::cell_mean;
  /// drop variants remove rows/columns whose missing fraction exceeds this.
  double threshold = 0.0;
};

/// One line of the imputation / exclusion report.
struct PrepAction {
  std::string sample_id;
  std::string variable;
  std::string action;
};

struct ImputationResult {
  ResponseMatrix data;
  BoolMatrix imputed;                  // provenance of every cell of `data`
  std::vector<std::size_t> kept_rows;  // indices into the raw rows
  std::vector<PrepAction> report;
  std::vector<std::string> warnings;
};

namespace detail {

inline bool is_balanced(const DesignSpec& spec) {
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t c : spec.full_cells()) ++counts[c];
  std::size_t first = counts.begin()->second;
  return std::all_of(counts.begin(), counts.end(), [&](const auto& kv) { return kv.second == first; });
}

}  // namespace detail

/// Resolves missing values. cell_mean uses the observed values of the same
/// design cell (combination of all factor levels) and variable.
inline ImputationResult impute(const RawResponseMatrix& raw, const DesignSpec& spec, const ImputeOptions& options) {
  if (raw.n_samples() != spec.n_samples()) {
    fail(ErrorKind::invalid_argument, "response and design have different sample counts");
  }
  const auto n = static_cast<Eigen::Index>(raw.n_samples());
  const auto p = static_cast<Eigen::Index>(raw.n_vars());
  ImputationResult out;
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  std::vector<Eigen::Index> cols(static_cast<std::size_t>(p));
  std::iota(cols.begin(), cols.end(), Eigen::Index{0});

  if (options.method == ImputeMethod::drop_rows) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i : rows) {
      const double frac = static_cast<double>(raw.missing.row(i).count()) / static_cast<double>(p);
      if (raw.missing.row(i).any() && frac > options.threshold) {
        out.report.push_back({raw.sample_ids[static_cast<std::size_t>(i)], "", "dropped_row"});
      } else {
        keep.push_back(i);
      }
    }
    rows = std::move(keep);
  } else if (options.method == ImputeMethod::drop_cols) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j : cols) {
      const double frac = static_cast<double>(raw.missing.col(j).count()) / static_cast<double>(n);
      if (raw.missing.col(j).any() && frac > options.threshold) {
        out.report.push_back({"", raw.variables[static_cast<std::size_t>(j)], "dropped_column"});
      } else {
        keep.push_back(j);
      }
    }
    cols = std::move(keep);
  }
  if (rows.empty() || cols.empty()) fail(ErrorKind::missing_data, "no data left after dropping missing values");

  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  BoolMatrix missing(values.rows(), values.cols());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) {
      values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = raw.values(rows[a], cols[b]);
      missing(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = raw.missing(rows[a], cols[b]);
    }
  }
  out.imputed = BoolMatrix::Constant(values.rows(), values.cols(), false);
  for (Eigen::Index r : rows) {
    out.kept_rows.push_back(static_cast<std::size_t>(r));
    out.data.sample_ids.push_back(raw.sample_ids[static_cast<std::size_t>(r)]);
  }
  for (Eigen::Index c : cols) out.data.variables.push_back(raw.variables[static_cast<std::size_t>(c)]);

  if (missing.any()) {
    if (options.method == ImputeMethod::drop_rows || options.method == ImputeMethod::drop_cols) {
      fail(ErrorKind::missing_data, std::to_string(missing.count()) +
                                        " missing values remain below the drop threshold; use an imputation method");
    }
    const std::vector<std::size_t> cells = spec.full_cells();
    std::vector<std::size_t> all_factors(spec.factors().size());
    std::iota(all_factors.begin(), all_factors.end(), std::size_t{0});
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (!missing.col(j).any()) continue;
      const std::string& var = out.data.variables[static_cast<std::size_t>(j)];
      if (options.method == ImputeMethod::unconditional_mean) {
        double sum = 0.0;
        std::size_t count = 0;
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
          if (!missing(i, j)) {
            sum += values(i, j);
            ++count;
          }
        }
        if (count == 0) fail(ErrorKind::missing_data, "variable '" + var + "' has no observed values");
        const double mean = sum / static_cast<double>(count);
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
          if (!missing(i, j)) continue;
          values(i, j) = mean;
          out.imputed(i, j) = true;
          out.report.push_back({out.data.sample_ids[static_cast<std::size_t>(i)], var, "imputed_mean"});
        }
      } else {
        std::map<std::size_t, std::pair<double, std::size_t>> acc;
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
          auto& a = acc[cells[rows[static_cast<std::size_t>(i)]]];
          if (!missing(i, j)) {
            a.first += values(i, j);
            ++a.second;
          }
        }
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
          if (!missing(i, j)) continue;
          const std::size_t raw_row = static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]);
          const auto& a = acc[cells[raw_row]];
          if (a.second == 0) {
            fail(ErrorKind::missing_data, "cell (" + spec.cell_label(all_factors, raw_row) +
                                              ") has no observed value for variable '" + var + "'");
          }
          values(i, j) = a.first / static_cast<double>(a.second);
          out.imputed(i, j) = true;
          out.report.push_back({out.data.sample_ids[static_cast<std::size_t>(i)], var, "imputed_cell_mean"});
        }
      }
    }
  }
  out.data.values = std::move(values);
  if (out.kept_rows.size() < raw.n_samples()) {
    const DesignSpec kept = spec.subset(out.kept_rows);
    if (!detail::is_balanced(kept)) out.warnings.push_back("dropping rows left the design unbalanced");
  }
  return out;
}

enum class TransformMethod { log, sqrt, box_cox, rank };

inline TransformMethod parse_transform(std::string_view s) {
  if (s == "log") return TransformMethod::log;
  if (s == "sqrt") return TransformMethod::sqrt;
  if (s == "box_cox" || s == "boxcox") return TransformMethod::box_cox;
  if (s == "rank") return TransformMethod::rank;
  fail(ErrorKind::invalid_argument, "unknown transform '" + std::string(s) + "'");
}

struct TransformOptions {
  TransformMethod method = TransformMethod::log;
  std::optional<double> lambda;  // box_cox; nullopt selects lambda per column
  double shift = 0.0;            // added before log / sqrt / box_cox
};

namespace detail {

inline double box_cox_value(double y, double lambda) {
  return lambda == 0.0 ? std::log(y) : (std::pow(y, lambda) - 1.0) / lambda;
}

/// Gaussian profile log-likelihood of the Box-Cox transformed column.
inline double box_cox_loglik(const Eigen::VectorXd& y, double lambda) {
  const auto n = static_cast<double>(y.size());
  Eigen::VectorXd z = y.unaryExpr([&](double v) { return box_cox_value(v, lambda); });
  const double var = (z.array() - z.mean()).square().sum() / n;
  if (!(var > 0.0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * n * std::log(var) + (lambda - 1.0) * y.array().log().sum();
}

/// 1-based ranks, ties receive the average of the ranks they span.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  Eigen::VectorXd ranks(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v(static_cast<Eigen::Index>(order[j + 1])) == v(static_cast<Eigen::Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks(static_cast<Eigen::Index>(order[k])) = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Box-Cox lambda grid used for automatic selection.
inline std::vector<double> box_cox_grid() {
  std::vector<double> grid;
  for (int k = -4; k <= 4; ++k) grid.push_back(0.5 * k);
  return grid;
}

struct TransformResult {
  ResponseMatrix data;
  std::vector<double> lambdas;  // box_cox only, one per column
};

inline TransformResult transform(const ResponseMatrix& y, const TransformOptions& options) {
  TransformResult out{y, {}};
  Eigen::MatrixXd& v = out.data.values;
  auto check = [&](bool ok, Eigen::Index i, Eigen::Index j, std::string_view need) {
    if (!ok) {
      fail(ErrorKind::domain, std::string(need) + " violated for variable '" + y.variables[static_cast<std::size_t>(j)] +
                                  "' at sample '" + y.sample_ids[static_cast<std::size_t>(i)] + "' (value " +
                                  io::format_double(y.values(i, j)) + ")");
    }
  };
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    if (options.method == TransformMethod::rank) {
      v.col(j) = detail::average_ranks(y.values.col(j));
      continue;
    }
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double s = y.values(i, j) + options.shift;
      switch (options.method) {
        case TransformMethod::log: check(s > 0.0, i, j, "log requires positive values;"); break;
        case TransformMethod::sqrt: check(s >= 0.0, i, j, "sqrt requires nonnegative values;"); break;
        default: check(s > 0.0, i, j, "box_cox requires positive values;"); break;
      }
      v(i, j) = s;
    }
    switch (options.method) {
      case TransformMethod::log: v.col(j) = v.col(j).array().log(); break;
      case TransformMethod::sqrt: v.col(j) = v.col(j).array().sqrt(); break;
      case TransformMethod::box_cox: {
        double lambda = 1.0;
        if (options.lambda) {
          lambda = *options.lambda;
        } else {
          double best = -std::numeric_limits<double>::infinity();
          for (double l : box_cox_grid()) {
            const double ll = detail::box_cox_loglik(v.col(j), l);
            if (ll > best) {
              best = ll;
              lambda = l;
            }
          }
        }
        out.lambdas.push_back(lambda);
        v.col(j) = v.col(j).unaryExpr([&](double x) { return detail::box_cox_value(x, lambda); });
        break;
      }
      case TransformMethod::rank: break;
    }
  }
  return out;
}

enum class ScaleMethod { mean_center, autoscale, reference_group };

inline ScaleMethod parse_scale(std::string_view s) {
  if (s == "mean_center" || s == "center") return ScaleMethod::mean_center;
  if (s == "autoscale" || s == "auto") return ScaleMethod::autoscale;
  if (s == "reference_group" || s == "reference") return ScaleMethod::reference_group;
  fail(ErrorKind::invalid_argument, "unknown scaling '" + std::string(s) + "'");
}

struct ScaleOptions {
  ScaleMethod method = ScaleMethod::autoscale;
  std::string factor;  // reference_group: factor and level defining the group
  std::string level;
};

/// Column centering and scaling; standard deviations use n-1.
inline ResponseMatrix scale(const ResponseMatrix& y, const ScaleOptions& options, const DesignSpec* spec = nullptr) {
  ResponseMatrix out = y;
  const Eigen::RowVectorXd means = column_means(y.values);
  out.values = y.values.rowwise() - means;
  if (options.method == ScaleMethod::mean_center) return out;

  Eigen::RowVectorXd sd(y.values.cols());
  if (options.method == ScaleMethod::autoscale) {
    if (y.values.rows() < 2) fail(ErrorKind::invalid_argument, "autoscaling needs at least 2 samples");
    sd = (out.values.colwise().squaredNorm() / static_cast<double>(y.values.rows() - 1)).cwiseSqrt();
  } else {
    if (!spec) fail(ErrorKind::invalid_argument, "reference-group scaling needs the design");
    const std::size_t f = spec->factor_index(options.factor);
    const auto& levels = spec->factors()[f].levels;
    const auto it = std::find(levels.begin(), levels.end(), options.level);
    if (it == levels.end()) {
      fail(ErrorKind::invalid_argument, "'" + options.level + "' is not a level of '" + options.factor + "'");
    }
    const auto level = static_cast<std::size_t>(it - levels.begin());
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < spec->n_samples(); ++i) {
      if (spec->level(i, f) == level) members.push_back(static_cast<Eigen::Index>(i));
    }
    if (members.size() < 2) fail(ErrorKind::invalid_argument, "reference group needs at least 2 samples");
    for (Eigen::Index j = 0; j < y.values.cols(); ++j) {
      double m = 0.0;
      for (Eigen::Index i : members) m += y.values(i, j);
      m /= static_cast<double>(members.size());
      double ss = 0.0;
      for (Eigen::Index i : members) ss += (y.values(i, j) - m) * (y.values(i, j) - m);
      sd(j) = std::sqrt(ss / static_cast<double>(members.size() - 1));
    }
  }
  std::string zero;
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (!(sd(j) > 0.0)) {
      if (!zero.empty()) zero += ", ";
      zero += y.variables[static_cast<std::size_t>(j)];
    }
  }
  if (!zero.empty()) fail(ErrorKind::degenerate_data, "zero standard deviation in column(s): " + zero);
  out.values = out.values.array().rowwise() / sd.array();
  return out;
}

using PreprocessStep = std::variant<ImputeOptions, TransformOptions, ScaleOptions>;

/// Ordered preprocessing steps, applied in declared order.
struct PreprocessPlan {
  std::vector<PreprocessStep> steps;
};

struct PreprocessResult {
  ResponseMatrix data;
  DesignSpec design;
  std::vector<PrepAction> report;
  std::vector<std::string> warnings;
};

inline PreprocessResult preprocess(const RawResponseMatrix& raw, const DesignSpec& spec, const PreprocessPlan& plan) {
  std::optional<ResponseMatrix> data;
  std::optional<DesignSpec> design(spec);
  std::vector<PrepAction> report;
  std::vector<std::string> warnings;
  auto resolved = [&]() -> ResponseMatrix& {
    if (!data) {
      if (raw.missing_count() > 0) {
        fail(ErrorKind::missing_data, std::to_string(raw.missing_count()) +
                                          " missing values present; add an imputation step");
      }
      data = ResponseMatrix{raw.values, raw.variables, raw.sample_ids};
    }
    return *data;
  };
  for (const auto& step : plan.steps) {
    if (const auto* imp = std::get_if<ImputeOptions>(&step)) {
      if (data) fail(ErrorKind::invalid_argument, "imputation must precede other preprocessing steps");
      auto r = impute(raw, spec, *imp);
      if (r.kept_rows.size() != raw.n_samples()) design = spec.subset(r.kept_rows);
      report.insert(report.end(), r.report.begin(), r.report.end());
      warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
      data = std::move(r.data);
    } else if (const auto* tr = std::get_if<TransformOptions>(&step)) {
      data = transform(resolved(), *tr).data;
    } else {
      data = scale(resolved(), std::get<ScaleOptions>(step), &*design);
    }
  }
  resolved();
  return {std::move(*data), std::move(*design), std::move(report), std::move(warnings)};
}

/// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> v, double q) {
  if (v.empty()) fail(ErrorKind::invalid_argument, "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct OutlierReport {
  Eigen::VectorXd d;
  Eigen::VectorXd q;
  double q_limit = 0.0;
  std::vector<std::size_t> flagged;  // samples with Q above q_limit
  ComponentFit model;
};

/// PCA-based D and Q per sample on the column-centered matrix. Flags, never
/// removes, samples whose Q exceeds the given empirical quantile.
inline OutlierReport outlier_diagnostics(const Eigen::MatrixXd& y, std::size_t n_components, double quantile = 0.99) {
  const Eigen::MatrixXd centered = y.rowwise() - column_means(y);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const std::size_t rank = rank_of(svd.singularValues(), centered.rows(), centered.cols());
  if (n_components > rank || n_components == 0) {
    fail(ErrorKind::invalid_argument, "requested " + std::to_string(n_components) + " components but the data has rank " +
                                          std::to_string(rank));
  }
  OutlierReport r;
  r.model = fit_components(centered, n_components);
  r.d = d_statistic(r.model.scores, r.model.scores);
  r.q = q_statistic(centered, r.model.loadings);
  r.q_limit = empirical_quantile(std::vector<double>(r.q.data(), r.q.data() + r.q.size()), quantile);
  for (Eigen::Index i = 0; i < r.q.size(); ++i) {
    if (r.q(i) > r.q_limit) r.flagged.push_back(static_cast<std::size_t>(i));
  }
  return r;
}

}  // namespace asca
