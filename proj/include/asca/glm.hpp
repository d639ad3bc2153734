#pragma once

// Least-squares factorization Y = 1 m' + sum_t Y_t + E and sums of squares
// under the simultaneous, Type I, Type II and Type III conventions.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asca/coding.hpp"
#include "asca/design.hpp"
#include "asca/error.hpp"

namespace asca {

struct ResponseMatrix {
  Eigen::MatrixXd values;  // samples x variables
  std::vector<std::string> variables;
  std::vector<std::string> sample_ids;

  std::size_t n_samples() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_vars() const { return static_cast<std::size_t>(values.cols()); }

  static ResponseMatrix from(Eigen::MatrixXd values) {
    ResponseMatrix y;
    y.values = std::move(values);
    for (Eigen::Index j = 0; j < y.values.cols(); ++j) y.variables.push_back("v" + std::to_string(j + 1));
    for (Eigen::Index i = 0; i < y.values.rows(); ++i) y.sample_ids.push_back("s" + std::to_string(i + 1));
    return y;
  }
};

struct Decomposition {
  Eigen::RowVectorXd intercept;             // m, the intercept coefficients
  std::vector<Eigen::MatrixXd> effects;     // aligned with terms; [0] is 1 m'
  Eigen::MatrixXd residuals;
  std::vector<Eigen::MatrixXd> coefficients;  // aligned with terms, width x n_vars
  Eigen::RowVectorXd column_means;

  Eigen::MatrixXd reconstruct() const {
    Eigen::MatrixXd y = residuals;
    for (const auto& e : effects) y += e;
    return y;
  }
};

struct FitOptions {
  /// Accept rank-deficient X and use the minimum-norm solution.
  bool allow_rank_deficient = false;
};

namespace detail {

/// Singular values below max(n,p) * eps * s_max count as zero.
inline double rank_threshold(Eigen::Index rows, Eigen::Index cols) {
  return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
}

inline Eigen::JacobiSVD<Eigen::MatrixXd> thin_svd(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(rank_threshold(m.rows(), m.cols()));
  return svd;
}

inline void check_response(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    fail(ErrorKind::invalid_argument, "model matrix has " + std::to_string(x.rows()) + " rows but the response has " +
                                          std::to_string(y.rows()));
  }
  if (!y.allFinite()) fail(ErrorKind::missing_data, "response contains missing or non-finite values");
}

}  // namespace detail

inline Eigen::RowVectorXd column_means(const Eigen::MatrixXd& y) { return y.colwise().mean(); }

/// Total SS after removing column means.
inline double total_ss(const Eigen::MatrixXd& y) {
  return (y.rowwise() - column_means(y)).squaredNorm();
}

/// OLS fit by a rank-revealing SVD; effect of term t is X[:, span t] * B_t.
inline Decomposition fit_ols(const DesignSpec& spec, const ModelMatrix& X, const ResponseMatrix& Y,
                             const FitOptions& options = {}) {
  detail::check_response(X.values, Y.values);
  auto svd = detail::thin_svd(X.values);
  if (svd.rank() < X.values.cols() && !options.allow_rank_deficient) {
    // name the first span that fails to add rank
    Eigen::Index width = 0;
    for (std::size_t t = 0; t < X.spans.size(); ++t) {
      width += static_cast<Eigen::Index>(X.spans[t].width);
      if (detail::numerical_rank(X.values.leftCols(width)) < width) {
        fail(ErrorKind::estimability, "model matrix is rank deficient in the columns of term '" +
                                          spec.term_name(spec.terms()[t]) + "'");
      }
    }
    fail(ErrorKind::estimability, "model matrix is rank deficient");
  }
  const Eigen::MatrixXd B = svd.solve(Y.values);

  Decomposition d;
  d.column_means = column_means(Y.values);
  Eigen::MatrixXd fitted = Eigen::MatrixXd::Zero(Y.values.rows(), Y.values.cols());
  for (std::size_t t = 0; t < X.spans.size(); ++t) {
    const auto& s = X.spans[t];
    Eigen::MatrixXd coef = B.middleRows(static_cast<Eigen::Index>(s.start), static_cast<Eigen::Index>(s.width));
    Eigen::MatrixXd effect = X.term_columns(t) * coef;
    fitted += effect;
    d.effects.push_back(std::move(effect));
    d.coefficients.push_back(std::move(coef));
  }
  d.intercept = d.coefficients.front().row(0);
  d.residuals = Y.values - fitted;
  return d;
}

enum class SsType { simultaneous, type1, type2, type3 };

inline std::string_view to_string(SsType t) {
  switch (t) {
    case SsType::simultaneous: return "simultaneous";
    case SsType::type1: return "type1";
    case SsType::type2: return "type2";
    case SsType::type3: return "type3";
  }
  return "";
}

inline SsType parse_ss_type(std::string_view s) {
  if (s == "simultaneous") return SsType::simultaneous;
  if (s == "type1" || s == "I") return SsType::type1;
  if (s == "type2" || s == "II") return SsType::type2;
  if (s == "type3" || s == "III") return SsType::type3;
  fail(ErrorKind::invalid_argument, "unknown SS convention '" + std::string(s) + "'");
}

/// Entries of term_ss / percent are aligned with DesignSpec::terms(); the
/// intercept slot (index 0) is always zero.
struct SsReport {
  SsType type = SsType::simultaneous;
  std::vector<double> term_ss;
  std::vector<double> percent;
  double residual_ss = 0.0;
  double total_ss = 0.0;

  /// Sum of all term and residual percentages; exceeds 100 when
  /// non-orthogonal terms double-count variance.
  double percent_sum() const {
    double s = 0.0;
    for (double p : percent) s += p;
    return s + (total_ss > 0.0 ? 100.0 * residual_ss / total_ss : 0.0);
  }
};

/// Evaluates per-term SS for any response under a fixed design and
/// convention. Orthonormal bases of every needed submodel are computed once,
/// so repeated evaluation (permutation testing) costs only projections.
class SsEngine {
 public:
  struct Values {
    std::vector<double> term_ss;  // aligned with terms, [0] unused
    double residual_ss = 0.0;
    double total_ss = 0.0;
  };

  SsEngine(const DesignSpec& spec, const ModelMatrix& X, SsType type,
           std::optional<std::vector<std::size_t>> type1_order = std::nullopt)
      : type_(type), n_terms_(spec.terms().size()) {
    std::vector<std::size_t> all;
    for (std::size_t t = 1; t < n_terms_; ++t) all.push_back(t);
    recipes_.assign(n_terms_, {});
    if (type == SsType::simultaneous) {
      auto svd = detail::thin_svd(X.values);
      if (svd.rank() < X.values.cols()) fail(ErrorKind::estimability, "model matrix is rank deficient");
      const Eigen::MatrixXd u = svd.matrixU();
      Eigen::VectorXd inv = svd.singularValues().cwiseInverse();
      pinv_ = svd.matrixV() * inv.asDiagonal() * u.transpose();
      for (std::size_t t = 0; t < n_terms_; ++t) {
        term_cols_.push_back(X.term_columns(t));
        spans_.push_back(X.spans[t]);
      }
      full_ = add_basis(spec, X, all);
      return;
    }
    if (type == SsType::type3 && X.scheme != CodingScheme::sum) {
      fail(ErrorKind::invalid_argument, "Type III sums of squares require sum coding");
    }
    full_ = add_basis(spec, X, all);
    const auto& terms = spec.terms();
    switch (type) {
      case SsType::type1: {
        order_ = type1_order.value_or(all);
        auto sorted = order_;
        std::sort(sorted.begin(), sorted.end());
        if (sorted != all) fail(ErrorKind::invalid_argument, "Type I order must list every model term exactly once");
        std::vector<std::size_t> included;
        empty_ = add_basis(spec, X, included);
        std::size_t previous = empty_;
        for (std::size_t t : order_) {
          included.push_back(t);
          const std::size_t next = add_basis(spec, X, included);
          recipes_[t] = {previous, next};
          previous = next;
        }
        break;
      }
      case SsType::type2:
        for (std::size_t t = 1; t < n_terms_; ++t) {
          std::vector<std::size_t> base;
          for (std::size_t u = 1; u < n_terms_; ++u) {
            if (u != t && !spec.is_below(terms[u], terms[t])) base.push_back(u);
          }
          const std::size_t without = add_basis(spec, X, base);
          base.push_back(t);
          recipes_[t] = {without, add_basis(spec, X, base)};
        }
        break;
      case SsType::type3:
        for (std::size_t t = 1; t < n_terms_; ++t) {
          std::vector<std::size_t> others;
          for (std::size_t u : all) {
            if (u != t) others.push_back(u);
          }
          recipes_[t] = {add_basis(spec, X, others), full_};
        }
        break;
      case SsType::simultaneous: break;
    }
  }

  SsType type() const { return type_; }

  Values compute(const Eigen::MatrixXd& y) const {
    Values v;
    v.term_ss.assign(n_terms_, 0.0);
    v.total_ss = total_ss(y);
    if (type_ == SsType::simultaneous) {
      const Eigen::MatrixXd B = pinv_ * y;
      Eigen::MatrixXd residual = y;
      for (std::size_t t = 0; t < n_terms_; ++t) {
        const Eigen::MatrixXd effect =
            term_cols_[t] *
            B.middleRows(static_cast<Eigen::Index>(spans_[t].start), static_cast<Eigen::Index>(spans_[t].width));
        if (t > 0) v.term_ss[t] = effect.squaredNorm();
        residual -= effect;
      }
      v.residual_ss = residual.squaredNorm();
      return v;
    }
    std::vector<double> e(bases_.size());
    for (std::size_t b = 0; b < bases_.size(); ++b) e[b] = residual_of(b, y);
    for (std::size_t t = 1; t < n_terms_; ++t) v.term_ss[t] = e[recipes_[t].first] - e[recipes_[t].second];
    v.residual_ss = e[full_];
    if (type_ == SsType::type1) v.total_ss = e[empty_];
    return v;
  }

  /// Least-squares fit of `y` on the model without term `t` (intercept kept).
  Eigen::MatrixXd reduced_fit(const DesignSpec& spec, const ModelMatrix& X, std::size_t t,
                              const Eigen::MatrixXd& y) const {
    std::vector<std::size_t> others;
    for (std::size_t u = 1; u < n_terms_; ++u) {
      if (u != t) others.push_back(u);
    }
    const auto cols = with_intercept(others);
    auto svd = detail::thin_svd(X.select(cols));
    if (svd.rank() < static_cast<Eigen::Index>(svd.cols())) {
      fail(ErrorKind::estimability, "reduced model without '" + spec.term_name(spec.terms()[t]) + "' is not estimable");
    }
    const Eigen::MatrixXd u = svd.matrixU();
    return u * (u.transpose() * y);
  }

 private:
  static std::vector<std::size_t> with_intercept(std::vector<std::size_t> terms) {
    terms.insert(terms.begin(), 0);
    return terms;
  }

  static std::string describe(const DesignSpec& spec, const std::vector<std::size_t>& terms) {
    std::string s = "Intercept";
    for (std::size_t t : terms) {
      if (t != 0) s += ", " + spec.term_name(spec.terms()[t]);
    }
    return s;
  }

  std::size_t add_basis(const DesignSpec& spec, const ModelMatrix& X, const std::vector<std::size_t>& terms) {
    auto key = terms;
    std::sort(key.begin(), key.end());
    for (std::size_t b = 0; b < keys_.size(); ++b) {
      if (keys_[b] == key) return b;
    }
    const auto cols = with_intercept(terms);
    const Eigen::MatrixXd x = X.select(cols);
    auto svd = detail::thin_svd(x);
    if (svd.rank() < x.cols()) {
      fail(ErrorKind::estimability, "submodel {" + describe(spec, terms) + "} is not estimable (rank " +
                                        std::to_string(svd.rank()) + " < " + std::to_string(x.cols()) + ")");
    }
    keys_.push_back(std::move(key));
    bases_.push_back(svd.matrixU());
    return bases_.size() - 1;
  }

  double residual_of(std::size_t b, const Eigen::MatrixXd& y) const {
    return (y - bases_[b] * (bases_[b].transpose() * y)).squaredNorm();
  }

  SsType type_;
  std::size_t n_terms_;
  std::vector<std::size_t> order_;
  std::vector<std::pair<std::size_t, std::size_t>> recipes_;  // (without, with) basis ids
  std::vector<std::vector<std::size_t>> keys_;
  std::vector<Eigen::MatrixXd> bases_;
  std::size_t full_ = 0;
  std::size_t empty_ = 0;
  // simultaneous
  Eigen::MatrixXd pinv_;
  std::vector<Eigen::MatrixXd> term_cols_;
  std::vector<TermSpan> spans_;
};

/// SS per term. Simultaneous SS is the squared norm of each effect matrix.
/// Type I uses `type1_order` (term indices, default declaration order);
/// Type II adds the term to the model of all terms that do not contain it;
/// Type III drops it from the full sum-coded model. E(.) refits are exact
/// least squares, so Type I parts telescope to the centered total.
inline SsReport sum_of_squares(const DesignSpec& spec, const ModelMatrix& X, const ResponseMatrix& Y,
                               const Decomposition& d, SsType type,
                               std::optional<std::vector<std::size_t>> type1_order = std::nullopt) {
  const std::size_t n_terms = spec.terms().size();
  SsReport r;
  r.type = type;
  if (type == SsType::simultaneous) {
    r.term_ss.assign(n_terms, 0.0);
    for (std::size_t t = 1; t < n_terms; ++t) r.term_ss[t] = d.effects.at(t).squaredNorm();
    r.residual_ss = d.residuals.squaredNorm();
    r.total_ss = total_ss(Y.values);
  } else {
    detail::check_response(X.values, Y.values);
    const SsEngine engine(spec, X, type, std::move(type1_order));
    auto v = engine.compute(Y.values);
    r.term_ss = std::move(v.term_ss);
    r.residual_ss = v.residual_ss;
    r.total_ss = v.total_ss;
  }
  r.percent.assign(n_terms, 0.0);
  if (r.total_ss > 0.0) {
    for (std::size_t t = 1; t < n_terms; ++t) r.percent[t] = 100.0 * r.term_ss[t] / r.total_ss;
  }
  return r;
}

/// 100 * SS(term) / SS_total.
inline double explained_variance(const SsReport& report, std::size_t term) {
  if (!(report.total_ss > 0.0)) fail(ErrorKind::degenerate_data, "explained variance undefined: total SS is zero");
  return 100.0 * report.term_ss.at(term) / report.total_ss;
}

inline double explained_variance(double ss, double total) {
  if (!(total > 0.0)) fail(ErrorKind::degenerate_data, "explained variance undefined: total SS is zero");
  return 100.0 * ss / total;
}

}  // namespace asca
