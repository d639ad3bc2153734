#pragma once

// Coded model matrix X for a design under sum, reference or weighted coding.

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asca/design.hpp"
#include "asca/error.hpp"

namespace asca {

enum class CodingScheme { sum, reference, weighted };

inline std::string_view to_string(CodingScheme s) {
  switch (s) {
    case CodingScheme::sum: return "sum";
    case CodingScheme::reference: return "reference";
    case CodingScheme::weighted: return "weighted";
  }
  return "";
}

inline CodingScheme parse_coding(std::string_view s) {
  if (s == "sum") return CodingScheme::sum;
  if (s == "reference") return CodingScheme::reference;
  if (s == "weighted") return CodingScheme::weighted;
  fail(ErrorKind::invalid_argument, "unknown coding scheme '" + std::string(s) + "'");
}

/// Contiguous block of columns belonging to one term.
struct TermSpan {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct ModelMatrix {
  Eigen::MatrixXd values;
  std::vector<TermSpan> spans;  // aligned with DesignSpec::terms()
  CodingScheme scheme = CodingScheme::sum;
  /// Per factor: one code row per level (levels x factor DoF).
  std::vector<Eigen::MatrixXd> level_codes;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

  auto term_columns(std::size_t term) const {
    const auto& s = spans.at(term);
    return values.middleCols(static_cast<Eigen::Index>(s.start), static_cast<Eigen::Index>(s.width));
  }

  /// Columns of the listed terms, in the listed order.
  Eigen::MatrixXd select(std::span<const std::size_t> terms) const {
    std::size_t width = 0;
    for (std::size_t t : terms) width += spans.at(t).width;
    Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(width));
    Eigen::Index c = 0;
    for (std::size_t t : terms) {
      const auto w = static_cast<Eigen::Index>(spans[t].width);
      out.middleCols(c, w) = term_columns(t);
      c += w;
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> level_counts(const DesignSpec& spec, std::size_t factor) {
  std::vector<std::size_t> counts(spec.factors()[factor].levels.size(), 0);
  for (std::size_t s = 0; s < spec.n_samples(); ++s) ++counts[spec.level(s, factor)];
  return counts;
}

// One-way coding block for a group of levels sharing a baseline.
inline void code_group(Eigen::MatrixXd& codes, std::span<const std::size_t> group, std::size_t baseline,
                       std::span<const std::size_t> counts, CodingScheme scheme, Eigen::Index& col) {
  for (std::size_t level : group) {
    if (level == baseline) continue;
    codes(static_cast<Eigen::Index>(level), col) = 1.0;
    switch (scheme) {
      case CodingScheme::sum: codes(static_cast<Eigen::Index>(baseline), col) = -1.0; break;
      case CodingScheme::reference: break;
      case CodingScheme::weighted:
        codes(static_cast<Eigen::Index>(baseline), col) =
            -static_cast<double>(counts[level]) / static_cast<double>(counts[baseline]);
        break;
    }
    ++col;
  }
}

inline Eigen::MatrixXd factor_codes(const DesignSpec& spec, std::size_t f, CodingScheme scheme) {
  const Factor& factor = spec.factors()[f];
  const auto counts = level_counts(spec, f);
  const auto width = static_cast<Eigen::Index>(dof_of_term(spec, detail::single_factor_term(spec.factors(), f)));
  Eigen::MatrixXd codes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(factor.levels.size()), width);
  Eigen::Index col = 0;
  if (!factor.nested_in) {
    std::vector<std::size_t> all(factor.levels.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    code_group(codes, all, factor.baseline, counts, scheme, col);
    return codes;
  }
  // Nested: one-way pattern over the children of each parent level.
  const std::size_t p = spec.factor_index(*factor.nested_in);
  const std::size_t n_parent = spec.factors()[p].levels.size();
  std::vector<std::size_t> parent_of(factor.levels.size(), 0);
  for (std::size_t s = 0; s < spec.n_samples(); ++s) parent_of[spec.level(s, f)] = spec.level(s, p);
  for (std::size_t pl = 0; pl < n_parent; ++pl) {
    std::vector<std::size_t> children;
    for (std::size_t l = 0; l < factor.levels.size(); ++l) {
      if (parent_of[l] == pl) children.push_back(l);
    }
    if (children.empty()) continue;
    const bool own_baseline = parent_of[factor.baseline] == pl;
    code_group(codes, children, own_baseline ? factor.baseline : children.front(), counts, scheme, col);
  }
  return codes;
}

inline Eigen::RowVectorXd kron_rows(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  Eigen::RowVectorXd out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

/// Code row for a combination of member levels (first member outermost).
inline Eigen::RowVectorXd term_code_row(const std::vector<Eigen::MatrixXd>& level_codes, const Term& term,
                                        std::span<const std::size_t> member_levels) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Ones(1);
  for (std::size_t m = 0; m < term.factors.size(); ++m) {
    row = kron_rows(row, level_codes[term.factors[m]].row(static_cast<Eigen::Index>(member_levels[m])));
  }
  return row;
}

inline Eigen::Index numerical_rank(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double tol = static_cast<double>(std::max(m.rows(), m.cols())) *
                     std::numeric_limits<double>::epsilon() * sv(0);
  return (sv.array() > tol).count();
}

inline std::string first_empty_cell(const DesignSpec& spec, const Term& term) {
  std::vector<std::size_t> sizes;
  for (std::size_t f : term.factors) sizes.push_back(spec.factors()[f].levels.size());
  std::vector<std::size_t> combo(sizes.size(), 0);
  while (true) {
    bool found = false;
    for (std::size_t s = 0; s < spec.n_samples() && !found; ++s) {
      found = true;
      for (std::size_t m = 0; m < combo.size(); ++m) found = found && spec.level(s, term.factors[m]) == combo[m];
    }
    if (!found) {
      std::string label;
      for (std::size_t m = 0; m < combo.size(); ++m) {
        if (m) label += ",";
        const auto& f = spec.factors()[term.factors[m]];
        label += f.name + "=" + f.levels[combo[m]];
      }
      return label;
    }
    std::size_t k = 0;
    while (k < combo.size() && ++combo[k] == sizes[k]) combo[k++] = 0;
    if (k == combo.size()) return {};
  }
}

}  // namespace detail

/// Builds X: intercept column, then one column block per term. Interaction
/// columns are element-wise products of member columns; nested factors are
/// coded within each parent level.
inline ModelMatrix build_model_matrix(const DesignSpec& spec, CodingScheme scheme) {
  ModelMatrix X;
  X.scheme = scheme;
  for (std::size_t f = 0; f < spec.factors().size(); ++f) {
    X.level_codes.push_back(detail::factor_codes(spec, f, scheme));
  }
  std::size_t p = 0;
  for (const auto& t : spec.terms()) {
    const std::size_t w = dof_of_term(spec, t);
    X.spans.push_back({p, w});
    p += w;
  }
  const auto n = static_cast<Eigen::Index>(spec.n_samples());
  X.values = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(p));
  std::vector<std::size_t> member_levels;
  for (std::size_t ti = 0; ti < spec.terms().size(); ++ti) {
    const Term& t = spec.terms()[ti];
    const auto start = static_cast<Eigen::Index>(X.spans[ti].start);
    const auto width = static_cast<Eigen::Index>(X.spans[ti].width);
    for (Eigen::Index s = 0; s < n; ++s) {
      if (t.kind == TermKind::intercept) {
        X.values(s, start) = 1.0;
        continue;
      }
      member_levels.clear();
      for (std::size_t f : t.factors) member_levels.push_back(spec.level(static_cast<std::size_t>(s), f));
      X.values.block(s, start, 1, width) = detail::term_code_row(X.level_codes, t, member_levels);
    }
  }

  if (detail::numerical_rank(X.values) < static_cast<Eigen::Index>(p)) {
    // Locate the first term whose columns add no new directions.
    Eigen::Index expected = 0;
    for (std::size_t ti = 0; ti < spec.terms().size(); ++ti) {
      expected += static_cast<Eigen::Index>(X.spans[ti].width);
      const auto prefix = X.values.leftCols(expected);
      if (detail::numerical_rank(prefix) < expected) {
        const Term& t = spec.terms()[ti];
        std::string msg = "model matrix is rank deficient at term '" + spec.term_name(t) + "'";
        const std::string cell = detail::first_empty_cell(spec, t);
        if (!cell.empty()) msg += ": cell (" + cell + ") has no samples";
        fail(ErrorKind::estimability, msg);
      }
    }
  }
  return X;
}

/// Per-level effects of a single factor from its estimated coefficients,
/// baseline level first. `level_counts` is needed only for weighted coding.
inline Eigen::VectorXd expand_constrained_effects(CodingScheme scheme, std::span<const double> estimated,
                                                  std::span<const std::size_t> level_counts = {}) {
  Eigen::VectorXd effects(static_cast<Eigen::Index>(estimated.size() + 1));
  double baseline = 0.0;
  for (std::size_t g = 0; g < estimated.size(); ++g) {
    effects(static_cast<Eigen::Index>(g + 1)) = estimated[g];
    switch (scheme) {
      case CodingScheme::sum: baseline -= estimated[g]; break;
      case CodingScheme::reference: break;
      case CodingScheme::weighted:
        if (level_counts.size() != estimated.size() + 1) {
          fail(ErrorKind::invalid_argument, "weighted coding needs one replicate count per level");
        }
        baseline -= static_cast<double>(level_counts[g + 1]) / static_cast<double>(level_counts[0]) * estimated[g];
        break;
    }
  }
  effects(0) = baseline;
  return effects;
}

/// Effect of every level (main/nested term) or every member-level
/// combination (interaction, first member outermost) of a fitted term.
inline Eigen::VectorXd expand_constrained_effects(const DesignSpec& spec, const ModelMatrix& X,
                                                  std::size_t term, const Eigen::VectorXd& coefficients) {
  const Term& t = spec.terms().at(term);
  if (t.kind == TermKind::intercept) return coefficients;
  if (static_cast<std::size_t>(coefficients.size()) != X.spans.at(term).width) {
    fail(ErrorKind::invalid_argument, "coefficient block does not match the width of '" + spec.term_name(t) + "'");
  }
  std::vector<std::size_t> sizes;
  std::size_t cells = 1;
  for (std::size_t f : t.factors) {
    sizes.push_back(spec.factors()[f].levels.size());
    cells *= sizes.back();
  }
  Eigen::VectorXd effects(static_cast<Eigen::Index>(cells));
  std::vector<std::size_t> combo(sizes.size(), 0);
  for (std::size_t c = 0; c < cells; ++c) {
    // combo enumerated with the last member fastest
    std::size_t rem = c;
    for (std::size_t m = sizes.size(); m-- > 0;) {
      combo[m] = rem % sizes[m];
      rem /= sizes[m];
    }
    effects(static_cast<Eigen::Index>(c)) = detail::term_code_row(X.level_codes, t, combo).dot(coefficients);
  }
  return effects;
}

}  // namespace asca
