#pragma once

// F-ratios with design-aware references, permutation p-values, multiple
// testing adjustment and the ASCA table.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "asca/coding.hpp"
#include "asca/design.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/io/csv.hpp"
#include "asca/random.hpp"

namespace asca {

enum class PermutationStrategy { unconstrained_rows, residual_reduced_model };
enum class TestStatistic { F, SS, MS, EV };

inline PermutationStrategy parse_strategy(std::string_view s) {
  if (s == "rows" || s == "unconstrained" || s == "unconstrained_rows") return PermutationStrategy::unconstrained_rows;
  if (s == "residual" || s == "residual_reduced_model") return PermutationStrategy::residual_reduced_model;
  if (s == "constrained" || s == "marginalized" || s == "marginalised") {
    fail(ErrorKind::unsupported, "permutation strategy '" + std::string(s) +
                                     "' is not implemented; new strategies plug in at asca::PermutationStrategy "
                                     "and permutation_test()");
  }
  fail(ErrorKind::invalid_argument, "unknown permutation strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(PermutationStrategy s) {
  return s == PermutationStrategy::unconstrained_rows ? "rows" : "residual";
}

inline TestStatistic parse_statistic(std::string_view s) {
  if (s == "F") return TestStatistic::F;
  if (s == "SS") return TestStatistic::SS;
  if (s == "MS") return TestStatistic::MS;
  if (s == "EV") return TestStatistic::EV;
  fail(ErrorKind::invalid_argument, "unknown test statistic '" + std::string(s) + "'");
}

struct PermutationPlan {
  PermutationStrategy strategy = PermutationStrategy::unconstrained_rows;
  std::size_t n_permutations = 999;
  std::uint64_t seed = 0;
  TestStatistic statistic = TestStatistic::F;
  SsType ss = SsType::simultaneous;
  std::size_t threads = 1;
  /// Enumerate all distinct permutations when there are no more than K.
  bool allow_exact = true;

  void validate() const {
    if (n_permutations < 19) {
      fail(ErrorKind::invalid_argument, "at least 19 permutations are required, got " + std::to_string(n_permutations));
    }
    if (threads == 0) fail(ErrorKind::invalid_argument, "thread count must be positive");
  }
};

/// Permutation p-value: (#{null >= observed} + 1) / (K + 1).
inline double permutation_pvalue(std::size_t exceedances, std::size_t n_permutations) {
  return (static_cast<double>(exceedances) + 1.0) / (static_cast<double>(n_permutations) + 1.0);
}

inline double mean_square(double ss, std::size_t dof) {
  if (dof == 0) fail(ErrorKind::invalid_argument, "mean square with zero degrees of freedom");
  return ss / static_cast<double>(dof);
}

namespace detail {

inline double ratio(double numerator_ms, double reference_ms) {
  if (reference_ms > 0.0) return numerator_ms / reference_ms;
  return numerator_ms > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

/// Degrees of freedom and reference term for every term, computed once.
struct TermStructure {
  std::vector<std::size_t> dof;
  std::vector<std::optional<std::size_t>> reference;
  std::size_t residual_dof = 0;

  explicit TermStructure(const DesignSpec& spec) {
    dof.push_back(1);
    reference.push_back(std::nullopt);
    for (std::size_t t = 1; t < spec.terms().size(); ++t) {
      dof.push_back(dof_of_term(spec, spec.terms()[t]));
      reference.push_back(reference_index(spec, t));
    }
    residual_dof = asca::residual_dof(spec);
  }

  double reference_ms(std::size_t t, const std::vector<double>& ss, double residual_ss) const {
    if (const auto r = reference[t]) return mean_square(ss[*r], dof[*r]);
    return mean_square(residual_ss, residual_dof);
  }

  double statistic(TestStatistic stat, std::size_t t, const std::vector<double>& ss, double residual_ss,
                   double total) const {
    switch (stat) {
      case TestStatistic::F: return ratio(mean_square(ss[t], dof[t]), reference_ms(t, ss, residual_ss));
      case TestStatistic::SS: return ss[t];
      case TestStatistic::MS: return mean_square(ss[t], dof[t]);
      case TestStatistic::EV: return total > 0.0 ? 100.0 * ss[t] / total : 0.0;
    }
    return 0.0;
  }
};

}  // namespace detail

/// (SS_t / DoF_t) / (SS_ref / DoF_ref) with the design's reference term.
/// A zero reference MS yields +infinity (or 0 when the term SS is also zero).
inline double f_ratio(const SsReport& report, const DesignSpec& spec, const Term& term) {
  const std::size_t t = spec.term_index(term);
  const std::size_t dof = dof_of_term(spec, term);
  if (dof == 0) fail(ErrorKind::invalid_argument, "term '" + spec.term_name(term) + "' has zero DoF");
  double ref_ms = 0.0;
  if (const auto r = reference_index(spec, t)) {
    ref_ms = mean_square(report.term_ss.at(*r), dof_of_term(spec, spec.terms()[*r]));
  } else {
    const std::size_t rdof = residual_dof(spec);
    if (rdof == 0) fail(ErrorKind::invalid_argument, "residual DoF is zero; F-ratio undefined");
    ref_ms = mean_square(report.residual_ss, rdof);
  }
  return detail::ratio(mean_square(report.term_ss.at(t), dof), ref_ms);
}

struct PermutationResult {
  std::vector<double> observed;                    // aligned with terms, [0] unused
  std::vector<double> p_values;                    // aligned with terms, [0] NaN
  std::vector<std::vector<double>> null_samples;   // [term][k]
  std::size_t n_permutations = 0;                  // K, or number of distinct arrangements if exact
  bool exact = false;
};

namespace detail {

/// log of n! / prod(n_c!) for the full-cell label multiset.
inline double log_distinct_arrangements(const std::vector<std::size_t>& cells) {
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t c : cells) ++counts[c];
  double v = std::lgamma(static_cast<double>(cells.size()) + 1.0);
  for (const auto& [c, n] : counts) v -= std::lgamma(static_cast<double>(n) + 1.0);
  return v;
}

/// Row permutation realising a relabelling of response rows to design cells.
inline std::vector<std::size_t> permutation_from_labels(const std::vector<std::size_t>& design_cells,
                                                        const std::vector<std::size_t>& labels) {
  std::map<std::size_t, std::vector<std::size_t>> rows_by_label;
  for (std::size_t j = 0; j < labels.size(); ++j) rows_by_label[labels[j]].push_back(j);
  std::map<std::size_t, std::size_t> next;
  std::vector<std::size_t> perm(design_cells.size());
  for (std::size_t i = 0; i < design_cells.size(); ++i) {
    const std::size_t c = design_cells[i];
    perm[i] = rows_by_label[c][next[c]++];
  }
  return perm;
}

inline Eigen::MatrixXd permute_rows(const Eigen::MatrixXd& y, const std::vector<std::size_t>& perm) {
  Eigen::MatrixXd out(y.rows(), y.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = y.row(static_cast<Eigen::Index>(perm[i]));
  return out;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < count; k += threads) fn(k);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Permutation test for every non-intercept term.
///
/// unconstrained_rows: permutes the rows of Y and recomputes all term
/// statistics from one refit per permutation (numerator and reference MS are
/// both recomputed). residual_reduced_model: per tested term, permutes the
/// residuals of the model without that term and adds back the reduced fit.
/// Permutation k is drawn from a stream keyed by (seed, k), so results do
/// not depend on the thread count.
inline PermutationResult permutation_test(const PermutationPlan& plan, const DesignSpec& spec, const ModelMatrix& X,
                                          const ResponseMatrix& Y) {
  plan.validate();
  detail::check_response(X.values, Y.values);
  const std::size_t n_terms = spec.terms().size();
  const std::size_t n = spec.n_samples();
  if (!(total_ss(Y.values) > 0.0)) fail(ErrorKind::degenerate_data, "all response columns are constant");

  const detail::TermStructure structure(spec);
  const SsEngine engine(spec, X, plan.ss);
  auto stats_of = [&](const SsEngine::Values& v, std::size_t t) {
    return structure.statistic(plan.statistic, t, v.term_ss, v.residual_ss, v.total_ss);
  };

  PermutationResult result;
  result.observed.assign(n_terms, std::numeric_limits<double>::quiet_NaN());
  result.p_values.assign(n_terms, std::numeric_limits<double>::quiet_NaN());
  {
    const auto v = engine.compute(Y.values);
    for (std::size_t t = 1; t < n_terms; ++t) result.observed[t] = stats_of(v, t);
  }

  // Exact enumeration over distinct arrangements of full-cell labels.
  const auto cells = spec.full_cells();
  std::vector<std::vector<std::size_t>> exact_perms;
  if (plan.allow_exact &&
      detail::log_distinct_arrangements(cells) <= std::log(static_cast<double>(plan.n_permutations)) + 1e-9) {
    auto labels = cells;
    std::sort(labels.begin(), labels.end());
    do {
      exact_perms.push_back(detail::permutation_from_labels(cells, labels));
    } while (std::next_permutation(labels.begin(), labels.end()));
    result.exact = true;
  }
  const std::size_t K = result.exact ? exact_perms.size() : plan.n_permutations;
  result.n_permutations = K;
  auto permutation = [&](std::size_t k) {
    if (result.exact) return exact_perms[k];
    auto engine_k = keyed_engine(plan.seed, {static_cast<std::uint64_t>(k)});
    return random_permutation(n, engine_k);
  };

  result.null_samples.assign(n_terms, std::vector<double>(K, 0.0));
  if (plan.strategy == PermutationStrategy::unconstrained_rows) {
    detail::parallel_for(K, plan.threads, [&](std::size_t k) {
      const auto v = engine.compute(detail::permute_rows(Y.values, permutation(k)));
      for (std::size_t t = 1; t < n_terms; ++t) result.null_samples[t][k] = stats_of(v, t);
    });
  } else {
    for (std::size_t t = 1; t < n_terms; ++t) {
      const Eigen::MatrixXd fitted = engine.reduced_fit(spec, X, t, Y.values);
      const Eigen::MatrixXd resid = Y.values - fitted;
      detail::parallel_for(K, plan.threads, [&](std::size_t k) {
        const Eigen::MatrixXd y = fitted + detail::permute_rows(resid, permutation(k));
        result.null_samples[t][k] = stats_of(engine.compute(y), t);
      });
    }
  }

  for (std::size_t t = 1; t < n_terms; ++t) {
    const double obs = result.observed[t];
    // values equal up to rounding noise count as ties, i.e. exceedances
    double scale = std::abs(obs);
    for (double s : result.null_samples[t]) scale = std::max(scale, std::abs(s));
    const double tie = 1e-10 * scale;
    std::size_t count = 0;
    for (double s : result.null_samples[t]) count += s >= obs - tie ? 1 : 0;
    // enumeration includes the identity arrangement, i.e. the observed data
    result.p_values[t] = result.exact ? static_cast<double>(count) / static_cast<double>(K)
                                      : permutation_pvalue(count, K);
  }
  return result;
}

enum class PAdjust { bonferroni, benjamini_hochberg };

inline PAdjust parse_padjust(std::string_view s) {
  if (s == "bonferroni") return PAdjust::bonferroni;
  if (s == "bh" || s == "benjamini_hochberg" || s == "fdr") return PAdjust::benjamini_hochberg;
  fail(ErrorKind::invalid_argument, "unknown p-value adjustment '" + std::string(s) + "'");
}

/// Bonferroni: min(1, m p). Benjamini-Hochberg: step-up adjusted values.
inline std::vector<double> adjust_pvalues(const std::vector<double>& p, PAdjust method) {
  const std::size_t m = p.size();
  std::vector<double> out(m);
  if (m == 0) return out;
  for (double v : p) {
    if (!(v > 0.0 && v <= 1.0)) fail(ErrorKind::invalid_argument, "p-values must lie in (0, 1]");
  }
  const double md = static_cast<double>(m);
  if (method == PAdjust::bonferroni) {
    for (std::size_t i = 0; i < m; ++i) out[i] = std::min(1.0, md * p[i]);
    return out;
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const std::size_t i = order[r];
    running = std::min(running, md * p[i] / static_cast<double>(r + 1));
    out[i] = running;
  }
  return out;
}

struct AscaRow {
  std::string name;
  double ss = 0.0;
  double percent = 0.0;
  std::size_t dof = 0;
  double ms = 0.0;
  std::optional<double> f;
  std::optional<double> p;
};

struct AscaTable {
  std::vector<AscaRow> terms;
  AscaRow residual;
  AscaRow total;
};

/// Rows SS, %SS, DoFs, MS, F, p-value per term, then Residuals and Total.
/// `f_values` / `p_values` are aligned with spec.terms(); the Total %SS is
/// the plain sum of the other rows and may exceed 100.
inline AscaTable build_asca_table(const DesignSpec& spec, const SsReport& report, const std::vector<double>& f_values,
                                  const std::vector<double>& p_values) {
  const std::size_t n_terms = spec.terms().size();
  if (report.term_ss.size() != n_terms || f_values.size() != n_terms || p_values.size() != n_terms) {
    fail(ErrorKind::invalid_argument, "ASCA table inputs are not aligned with the model terms");
  }
  AscaTable table;
  const double total = report.total_ss;
  auto pct = [&](double ss) { return total > 0.0 ? 100.0 * ss / total : 0.0; };
  double pct_sum = 0.0;
  for (std::size_t t = 1; t < n_terms; ++t) {
    AscaRow row;
    row.name = spec.term_name(spec.terms()[t]);
    row.ss = report.term_ss[t];
    row.percent = pct(row.ss);
    row.dof = dof_of_term(spec, spec.terms()[t]);
    row.ms = mean_square(row.ss, row.dof);
    row.f = f_values[t];
    row.p = p_values[t];
    pct_sum += row.percent;
    table.terms.push_back(std::move(row));
  }
  table.residual.name = "Residuals";
  table.residual.ss = report.residual_ss;
  table.residual.percent = pct(report.residual_ss);
  table.residual.dof = residual_dof(spec);
  table.residual.ms = table.residual.dof ? report.residual_ss / static_cast<double>(table.residual.dof)
                                         : std::numeric_limits<double>::quiet_NaN();
  table.total.name = "Total";
  table.total.ss = total;
  table.total.percent = pct_sum + table.residual.percent;
  table.total.dof = spec.n_samples() - 1;
  table.total.ms = table.total.dof ? total / static_cast<double>(table.total.dof)
                                   : std::numeric_limits<double>::quiet_NaN();
  return table;
}

/// Machine CSV with shortest round-trip numbers; F and p empty where absent.
inline std::string to_csv(const AscaTable& table) {
  std::ostringstream out;
  io::CsvWriter w(out);
  w.row({"term", "SS", "%SS", "DoFs", "MS", "F", "p-value"});
  auto emit = [&](const AscaRow& r) {
    w.row({r.name, io::format_double(r.ss), io::format_double(r.percent), std::to_string(r.dof),
           io::format_double(r.ms), r.f ? io::format_double(*r.f) : "", r.p ? io::format_double(*r.p) : ""});
  };
  for (const auto& r : table.terms) emit(r);
  emit(table.residual);
  emit(table.total);
  return out.str();
}

/// Aligned plain-text table, 4 significant digits.
inline std::string to_text(const AscaTable& table) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"", "SS", "%SS", "DoFs", "MS", "F", "p-value"});
  auto emit = [&](const AscaRow& r) {
    cells.push_back({r.name, io::format_sig(r.ss), io::format_sig(r.percent), std::to_string(r.dof),
                     io::format_sig(r.ms), r.f ? io::format_sig(*r.f) : "", r.p ? io::format_sig(*r.p) : ""});
  };
  for (const auto& r : table.terms) emit(r);
  emit(table.residual);
  const std::size_t rule_at = cells.size();
  emit(table.total);

  std::vector<std::size_t> width(7, 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::size_t line_width = 0;
  for (std::size_t w : width) line_width += w + 2;
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (r == 1 || r == rule_at) out << std::string(line_width, '-') << '\n';
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const auto& s = cells[r][c];
      if (c == 0) {
        line += s + std::string(width[c] - s.size() + 2, ' ');
      } else {
        line += std::string(width[c] - s.size(), ' ') + s + "  ";
      }
    }
    line.erase(line.find_last_not_of(' ') + 1);
    out << line << '\n';
  }
  return out.str();
}

}  // namespace asca
