#pragma once

// Experimental design: factors, model terms, the per-sample design table and
// the structural quantities derived from them (term order, DoF, F-ratio
// reference terms).

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "asca/error.hpp"

namespace asca {

enum class FactorNature { fixed, random };
enum class FactorKind { nominal, ordinal };

struct Factor {
  std::string name;
  FactorNature nature = FactorNature::fixed;
  FactorKind kind = FactorKind::nominal;  // reporting metadata only
  std::vector<std::string> levels;
  std::optional<std::string> nested_in;
  std::size_t baseline = 0;  // dropped / reference level, index into levels

  bool is_random() const { return nature == FactorNature::random; }
};

enum class TermKind { intercept, main, nested, interaction, residual };

/// A model term. `factors` holds indices into DesignSpec::factors(); the
/// residual kind is the pseudo-term used as F-ratio reference.
struct Term {
  TermKind kind = TermKind::intercept;
  std::vector<std::size_t> factors;
  int order = 0;

  static Term intercept() { return Term{}; }
  static Term residual() { return Term{TermKind::residual, {}, 0}; }

  friend bool operator==(const Term& a, const Term& b) {
    if (a.kind != b.kind) return false;
    auto fa = a.factors;
    auto fb = b.factors;
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    return fa == fb;
  }
};

namespace detail {

struct FactorRef {
  std::string name;
  std::optional<std::string> parent;
};

using FormulaAst = std::vector<std::vector<FactorRef>>;

inline bool is_name_char(char c) {
  return !std::isspace(static_cast<unsigned char>(c)) && c != '+' && c != '*' && c != '(' &&
         c != ')';
}

inline FormulaAst parse_formula_ast(std::string_view text) {
  FormulaAst ast;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto read_name = [&]() -> std::string {
    skip_ws();
    const std::size_t start = pos;
    while (pos < text.size() && is_name_char(text[pos])) ++pos;
    if (pos == start) {
      fail(ErrorKind::formula, "expected a factor name at position " + std::to_string(start) +
                                   " in model formula '" + std::string(text) + "'");
    }
    return std::string(text.substr(start, pos - start));
  };
  auto expect = [&](char c) {
    skip_ws();
    if (pos >= text.size() || text[pos] != c) {
      fail(ErrorKind::formula, std::string("expected '") + c + "' at position " +
                                   std::to_string(pos) + " in model formula '" +
                                   std::string(text) + "'");
    }
    ++pos;
  };

  skip_ws();
  if (pos == text.size()) fail(ErrorKind::formula, "empty model formula");
  while (true) {
    std::vector<FactorRef> term;
    while (true) {
      FactorRef ref{read_name(), std::nullopt};
      skip_ws();
      if (pos < text.size() && text[pos] == '(') {
        ++pos;
        ref.parent = read_name();
        expect(')');
      }
      term.push_back(std::move(ref));
      skip_ws();
      if (pos < text.size() && text[pos] == '*') {
        ++pos;
        continue;
      }
      break;
    }
    ast.push_back(std::move(term));
    skip_ws();
    if (pos == text.size()) break;
    expect('+');
  }
  return ast;
}

}  // namespace detail

/// Factor names referenced by a formula, in order of first appearance
/// (nesting parents included).
inline std::vector<std::string> formula_factor_names(std::string_view text) {
  std::vector<std::string> names;
  auto add = [&](const std::string& n) {
    if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  };
  for (const auto& term : detail::parse_formula_ast(text)) {
    for (const auto& ref : term) {
      add(ref.name);
      if (ref.parent) add(*ref.parent);
    }
  }
  return names;
}

/// Nesting relations declared with the `C(A)` syntax.
inline std::map<std::string, std::string> formula_nesting(std::string_view text) {
  std::map<std::string, std::string> nesting;
  for (const auto& term : detail::parse_formula_ast(text)) {
    for (const auto& ref : term) {
      if (!ref.parent) continue;
      auto [it, inserted] = nesting.emplace(ref.name, *ref.parent);
      if (!inserted && it->second != *ref.parent) {
        fail(ErrorKind::formula, "factor '" + ref.name + "' is declared nested in both '" +
                                     it->second + "' and '" + *ref.parent + "'");
      }
    }
  }
  return nesting;
}

namespace detail {

inline std::size_t find_factor(const std::vector<Factor>& factors, std::string_view name) {
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].name == name) return i;
  }
  fail(ErrorKind::formula, "unknown factor '" + std::string(name) + "' in model formula");
}

/// Factor plus all its nesting ancestors.
inline std::vector<std::size_t> ancestry(const std::vector<Factor>& factors, std::size_t f) {
  std::vector<std::size_t> chain{f};
  std::size_t guard = 0;
  while (factors[f].nested_in) {
    f = find_factor(factors, *factors[f].nested_in);
    chain.push_back(f);
    if (++guard > factors.size()) fail(ErrorKind::invalid_design, "nesting relations form a cycle");
  }
  return chain;
}

inline bool nested_within(const std::vector<Factor>& factors, std::size_t child, std::size_t ancestor) {
  const auto chain = ancestry(factors, child);
  return std::find(chain.begin() + 1, chain.end(), ancestor) != chain.end();
}

inline int factor_order(const std::vector<Factor>& factors, std::size_t f) {
  return static_cast<int>(ancestry(factors, f).size());
}

inline Term single_factor_term(const std::vector<Factor>& factors, std::size_t f) {
  Term t;
  t.kind = factors[f].nested_in ? TermKind::nested : TermKind::main;
  t.factors = {f};
  t.order = factor_order(factors, f);
  return t;
}

inline Term make_term(const std::vector<Factor>& factors, std::vector<std::size_t> members) {
  if (members.size() == 1) return single_factor_term(factors, members.front());
  Term t;
  t.kind = TermKind::interaction;
  t.factors = std::move(members);
  t.order = 0;
  for (std::size_t f : t.factors) t.order += factor_order(factors, f);
  return t;
}

}  // namespace detail

/// Parses `A + B + C(A) + A*B` into an ordered term list with the intercept
/// prepended. With hierarchy closure, an interaction first pulls in all of
/// its lower-order marginal terms.
inline std::vector<Term> parse_model_formula(std::string_view text, const std::vector<Factor>& factors,
                                             bool hierarchy_closure = true) {
  const auto ast = detail::parse_formula_ast(text);
  std::vector<Term> terms{Term::intercept()};
  std::vector<Term> explicit_terms;

  auto present = [&](const Term& t) {
    return std::find(terms.begin(), terms.end(), t) != terms.end();
  };

  for (const auto& refs : ast) {
    std::vector<std::size_t> members;
    for (const auto& ref : refs) {
      const std::size_t f = detail::find_factor(factors, ref.name);
      if (ref.parent) {
        detail::find_factor(factors, *ref.parent);
        if (!factors[f].nested_in || *factors[f].nested_in != *ref.parent) {
          fail(ErrorKind::formula, "'" + ref.name + "(" + *ref.parent + ")' does not match the declared nesting of '" +
                                       ref.name + "'");
        }
      }
      if (std::find(members.begin(), members.end(), f) != members.end()) {
        fail(ErrorKind::formula, "factor '" + ref.name + "' repeated within one interaction");
      }
      members.push_back(f);
    }
    for (std::size_t a : members) {
      for (std::size_t b : members) {
        if (a != b && detail::nested_within(factors, a, b)) {
          fail(ErrorKind::formula, "interaction between '" + factors[b].name + "' and '" + factors[a].name +
                                       "' is undefined: '" + factors[a].name + "' is nested in '" +
                                       factors[b].name + "'");
        }
      }
    }

    Term term = detail::make_term(factors, members);
    if (std::find(explicit_terms.begin(), explicit_terms.end(), term) != explicit_terms.end()) {
      fail(ErrorKind::formula, "duplicate term in model formula '" + std::string(text) + "'");
    }
    explicit_terms.push_back(term);

    if (hierarchy_closure && members.size() > 1) {
      const std::size_t k = members.size();
      for (std::size_t size = 1; size < k; ++size) {
        // subsets of the given size, lexicographic over member positions
        std::vector<bool> pick(k, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
        do {
          std::vector<std::size_t> subset;
          for (std::size_t i = 0; i < k; ++i) {
            if (pick[i]) subset.push_back(members[i]);
          }
          Term implied = detail::make_term(factors, subset);
          if (!present(implied)) terms.push_back(std::move(implied));
        } while (std::prev_permutation(pick.begin(), pick.end()));
      }
    }
    if (!present(term)) terms.push_back(std::move(term));
  }
  return terms;
}

/// Inverse of parse_model_formula (intercept omitted).
inline std::string format_model_formula(const std::vector<Term>& terms, const std::vector<Factor>& factors) {
  std::string out;
  for (const auto& t : terms) {
    if (t.kind == TermKind::intercept || t.kind == TermKind::residual) continue;
    if (!out.empty()) out += " + ";
    if (t.kind == TermKind::nested) {
      const auto& f = factors[t.factors.front()];
      out += f.name + "(" + *f.nested_in + ")";
    } else {
      for (std::size_t i = 0; i < t.factors.size(); ++i) {
        if (i) out += "*";
        out += factors[t.factors[i]].name;
      }
    }
  }
  return out;
}

/// Immutable experimental design. Construct through DesignSpec::create or
/// build_design; both validate every structural invariant.
class DesignSpec {
 public:
  static DesignSpec create(std::vector<Factor> factors, std::vector<Term> terms,
                           std::vector<std::vector<std::size_t>> assignments,
                           std::vector<std::string> sample_ids = {}) {
    DesignSpec spec;
    spec.factors_ = std::move(factors);
    spec.terms_ = std::move(terms);
    spec.n_ = assignments.size();
    spec.sample_ids_ = std::move(sample_ids);
    if (spec.sample_ids_.empty()) {
      for (std::size_t i = 0; i < spec.n_; ++i) spec.sample_ids_.push_back("s" + std::to_string(i + 1));
    }
    spec.table_.reserve(spec.n_ * spec.factors_.size());
    for (const auto& row : assignments) {
      if (row.size() != spec.factors_.size()) {
        fail(ErrorKind::invalid_design, "design table row has " + std::to_string(row.size()) +
                                            " assignments for " + std::to_string(spec.factors_.size()) +
                                            " factors");
      }
      spec.table_.insert(spec.table_.end(), row.begin(), row.end());
    }
    spec.validate();
    return spec;
  }

  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<Term>& terms() const { return terms_; }
  std::size_t n_samples() const { return n_; }
  const std::vector<std::string>& sample_ids() const { return sample_ids_; }

  /// Level index of `factor` for `sample`.
  std::size_t level(std::size_t sample, std::size_t factor) const {
    return table_[sample * factors_.size() + factor];
  }

  std::size_t factor_index(std::string_view name) const {
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      if (factors_[i].name == name) return i;
    }
    fail(ErrorKind::invalid_argument, "unknown factor '" + std::string(name) + "'");
  }

  /// Position of `term` in terms(), if it belongs to the model.
  std::optional<std::size_t> find_term(const Term& term) const {
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (terms_[i] == term) return i;
    }
    return std::nullopt;
  }

  std::size_t term_index(const Term& term) const {
    if (auto i = find_term(term)) return *i;
    fail(ErrorKind::invalid_argument, "term '" + term_name(term) + "' is not part of the model");
  }

  /// Accepts the full term name or, for a nested term, the bare factor name.
  std::size_t term_index(std::string_view name) const {
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (term_name(terms_[i]) == name) return i;
    }
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      if (terms_[i].kind == TermKind::nested && factors_[terms_[i].factors.front()].name == name) return i;
    }
    fail(ErrorKind::invalid_argument, "no model term named '" + std::string(name) + "'");
  }

  std::string term_name(const Term& t) const {
    switch (t.kind) {
      case TermKind::intercept: return "Intercept";
      case TermKind::residual: return "Residuals";
      case TermKind::nested: {
        const auto& f = factors_.at(t.factors.front());
        return f.name + "(" + *f.nested_in + ")";
      }
      default: {
        std::string name;
        for (std::size_t i = 0; i < t.factors.size(); ++i) {
          if (i) name += "*";
          name += factors_.at(t.factors[i]).name;
        }
        return name;
      }
    }
  }

  std::string formula() const { return format_model_formula(terms_, factors_); }

  /// Factors a term depends on, including nesting ancestors of its members.
  std::set<std::size_t> scope(const Term& t) const {
    std::set<std::size_t> s;
    for (std::size_t f : t.factors) {
      for (std::size_t a : detail::ancestry(factors_, f)) s.insert(a);
    }
    return s;
  }

  /// True when `lower` sits strictly below `upper` in the Hasse diagram
  /// (lower's scope strictly contains upper's).
  bool is_below(const Term& lower, const Term& upper) const {
    if (lower.kind == TermKind::intercept || lower.kind == TermKind::residual) return false;
    if (upper.kind == TermKind::intercept) return true;
    const auto ls = scope(lower);
    const auto us = scope(upper);
    return ls.size() > us.size() && std::includes(ls.begin(), ls.end(), us.begin(), us.end());
  }

  bool is_random(const Term& t) const {
    return std::any_of(t.factors.begin(), t.factors.end(),
                       [&](std::size_t f) { return factors_[f].is_random(); });
  }

  /// Cell id per sample for the combination of a term's member levels.
  /// Cells are numbered in order of first appearance.
  std::vector<std::size_t> term_cells(const Term& t) const {
    std::vector<std::size_t> ids(n_);
    std::map<std::vector<std::size_t>, std::size_t> index;
    for (std::size_t i = 0; i < n_; ++i) {
      std::vector<std::size_t> key;
      for (std::size_t f : t.factors) key.push_back(level(i, f));
      auto [it, inserted] = index.emplace(std::move(key), index.size());
      ids[i] = it->second;
    }
    return ids;
  }

  /// Cell id per sample over all factors of the design (full cells).
  std::vector<std::size_t> full_cells() const {
    Term all;
    all.kind = TermKind::interaction;
    all.factors.resize(factors_.size());
    std::iota(all.factors.begin(), all.factors.end(), std::size_t{0});
    return term_cells(all);
  }

  std::string cell_label(const std::vector<std::size_t>& factors, std::size_t sample) const {
    std::string label;
    for (std::size_t f : factors) {
      if (!label.empty()) label += ",";
      label += factors_[f].name + "=" + factors_[f].levels[level(sample, f)];
    }
    return label;
  }

  /// Rows kept in the given order; levels that disappear are dropped.
  DesignSpec subset(std::span<const std::size_t> rows) const {
    std::vector<Factor> factors = factors_;
    std::vector<std::vector<std::size_t>> remap(factors_.size());
    for (std::size_t f = 0; f < factors_.size(); ++f) {
      std::vector<bool> used(factors_[f].levels.size(), false);
      for (std::size_t r : rows) used.at(level(r, f)) = true;
      remap[f].assign(factors_[f].levels.size(), 0);
      factors[f].levels.clear();
      std::size_t next = 0;
      std::size_t baseline = 0;
      for (std::size_t l = 0; l < used.size(); ++l) {
        if (!used[l]) continue;
        if (l == factors_[f].baseline) baseline = next;
        remap[f][l] = next++;
        factors[f].levels.push_back(factors_[f].levels[l]);
      }
      factors[f].baseline = baseline;
    }
    std::vector<std::vector<std::size_t>> table;
    std::vector<std::string> ids;
    for (std::size_t r : rows) {
      std::vector<std::size_t> row(factors_.size());
      for (std::size_t f = 0; f < factors_.size(); ++f) row[f] = remap[f][level(r, f)];
      table.push_back(std::move(row));
      ids.push_back(sample_ids_.at(r));
    }
    return create(std::move(factors), terms_, std::move(table), std::move(ids));
  }

 private:
  DesignSpec() = default;

  void validate();

  std::vector<Factor> factors_;
  std::vector<Term> terms_;
  std::vector<std::size_t> table_;
  std::vector<std::string> sample_ids_;
  std::size_t n_ = 0;
};

/// Degrees of freedom of a term: G-1 for a main factor, own minus parent
/// level count for a nested factor, product over members for interactions.
inline std::size_t dof_of_term(const DesignSpec& spec, const Term& term) {
  const auto& factors = spec.factors();
  auto factor_dof = [&](std::size_t f) -> std::size_t {
    const auto& factor = factors.at(f);
    const std::size_t own = factor.levels.size();
    if (!factor.nested_in) return own - 1;
    const std::size_t parent = factors.at(spec.factor_index(*factor.nested_in)).levels.size();
    if (own <= parent) {
      fail(ErrorKind::invalid_design, "nested factor '" + factor.name + "' has " + std::to_string(own) +
                                          " levels, not more than the " + std::to_string(parent) +
                                          " levels of '" + *factor.nested_in + "'");
    }
    return own - parent;
  };
  switch (term.kind) {
    case TermKind::intercept: return 1;
    case TermKind::residual: fail(ErrorKind::invalid_argument, "use residual_dof for the residual term");
    case TermKind::main:
    case TermKind::nested: return factor_dof(term.factors.front());
    case TermKind::interaction: {
      std::size_t dof = 1;
      for (std::size_t f : term.factors) dof *= factor_dof(f);
      return dof;
    }
  }
  return 0;
}

inline std::size_t residual_dof(const DesignSpec& spec) {
  long long dof = static_cast<long long>(spec.n_samples()) - 1;
  for (const auto& t : spec.terms()) {
    if (t.kind != TermKind::intercept) dof -= static_cast<long long>(dof_of_term(spec, t));
  }
  if (dof < 0) {
    fail(ErrorKind::over_parameterized, "model uses more degrees of freedom than the " +
                                            std::to_string(spec.n_samples()) + " samples provide");
  }
  return static_cast<std::size_t>(dof);
}

namespace detail {

/// Index of the F-ratio reference term, nullopt meaning residuals. Throws
/// when several incomparable random terms compete (quasi-F territory).
inline std::optional<std::size_t> reference_index_checked(const DesignSpec& spec, const Term& tested) {
  const auto& terms = spec.terms();
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Term& u = terms[i];
    if (u.kind == TermKind::intercept || u == tested) continue;
    if (spec.is_random(u) && spec.is_below(u, tested)) candidates.push_back(i);
  }
  if (candidates.empty()) return std::nullopt;
  std::vector<std::size_t> minimal;
  for (std::size_t c : candidates) {
    bool has_higher = std::any_of(candidates.begin(), candidates.end(), [&](std::size_t o) {
      return o != c && spec.is_below(terms[c], terms[o]);
    });
    if (!has_higher) minimal.push_back(c);
  }
  if (minimal.size() > 1) {
    fail(ErrorKind::invalid_design,
         "term '" + spec.term_name(tested) + "' has several competing random reference terms ('" +
             spec.term_name(terms[minimal[0]]) + "', '" + spec.term_name(terms[minimal[1]]) +
             "'); designs needing quasi-F ratios are not supported");
  }
  std::size_t best = candidates.front();
  for (std::size_t c : candidates) {
    if (terms[c].order < terms[best].order) best = c;
  }
  return best;
}

}  // namespace detail

/// F-ratio reference: the lowest-order random term strictly below `term` in
/// the Hasse diagram, otherwise the residual pseudo-term.
inline Term reference_term(const DesignSpec& spec, const Term& term) {
  if (auto i = detail::reference_index_checked(spec, term)) return spec.terms()[*i];
  return Term::residual();
}

inline std::optional<std::size_t> reference_index(const DesignSpec& spec, std::size_t term) {
  return detail::reference_index_checked(spec, spec.terms().at(term));
}

inline void DesignSpec::validate() {
  if (factors_.empty() && terms_.size() > 1) fail(ErrorKind::invalid_design, "design has no factors");
  std::set<std::string> names;
  for (const auto& f : factors_) {
    if (f.name.empty()) fail(ErrorKind::invalid_design, "factor with empty name");
    if (!names.insert(f.name).second) fail(ErrorKind::invalid_design, "duplicate factor '" + f.name + "'");
    if (f.levels.size() < 2) {
      fail(ErrorKind::invalid_design, "factor '" + f.name + "' needs at least 2 levels, has " +
                                          std::to_string(f.levels.size()));
    }
    std::set<std::string> labels(f.levels.begin(), f.levels.end());
    if (labels.size() != f.levels.size()) {
      fail(ErrorKind::invalid_design, "factor '" + f.name + "' has duplicate level labels");
    }
    if (f.baseline >= f.levels.size()) {
      fail(ErrorKind::invalid_design, "baseline level out of range for factor '" + f.name + "'");
    }
  }
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    const auto& f = factors_[i];
    if (!f.nested_in) continue;
    if (*f.nested_in == f.name) fail(ErrorKind::invalid_design, "factor '" + f.name + "' nested in itself");
    if (!names.count(*f.nested_in)) {
      fail(ErrorKind::invalid_design, "factor '" + f.name + "' nested in unknown factor '" + *f.nested_in + "'");
    }
    detail::ancestry(factors_, i);  // cycle check
  }

  // design table
  for (std::size_t s = 0; s < n_; ++s) {
    for (std::size_t f = 0; f < factors_.size(); ++f) {
      if (level(s, f) >= factors_[f].levels.size()) {
        fail(ErrorKind::invalid_design, "sample '" + sample_ids_[s] + "' has an invalid level for factor '" +
                                            factors_[f].name + "'");
      }
    }
  }
  if (sample_ids_.size() != n_) fail(ErrorKind::invalid_design, "sample id count does not match design rows");
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    std::vector<bool> seen(factors_[f].levels.size(), false);
    for (std::size_t s = 0; s < n_; ++s) seen[level(s, f)] = true;
    for (std::size_t l = 0; l < seen.size(); ++l) {
      if (!seen[l]) {
        fail(ErrorKind::invalid_design, "level '" + factors_[f].levels[l] + "' of factor '" +
                                            factors_[f].name + "' has no samples");
      }
    }
    if (const auto& parent = factors_[f].nested_in) {
      const std::size_t p = factor_index(*parent);
      std::vector<std::optional<std::size_t>> owner(factors_[f].levels.size());
      for (std::size_t s = 0; s < n_; ++s) {
        auto& o = owner[level(s, f)];
        if (o && *o != level(s, p)) {
          fail(ErrorKind::invalid_design, "level '" + factors_[f].levels[level(s, f)] + "' of nested factor '" +
                                              factors_[f].name + "' occurs under more than one level of '" +
                                              *parent + "'");
        }
        o = level(s, p);
      }
    }
  }

  // terms
  if (terms_.empty() || terms_.front().kind != TermKind::intercept) {
    fail(ErrorKind::invalid_design, "the intercept must be term 0");
  }
  for (std::size_t i = 1; i < terms_.size(); ++i) {
    Term& t = terms_[i];
    if (t.kind == TermKind::intercept || t.kind == TermKind::residual) {
      fail(ErrorKind::invalid_design, "intercept/residual may not appear as a model term");
    }
    if (t.factors.empty()) fail(ErrorKind::invalid_design, "term without factors");
    for (std::size_t f : t.factors) {
      if (f >= factors_.size()) fail(ErrorKind::invalid_design, "term references an undeclared factor");
    }
    if (t.kind == TermKind::interaction) {
      std::set<std::size_t> distinct(t.factors.begin(), t.factors.end());
      if (distinct.size() < 2 || distinct.size() != t.factors.size()) {
        fail(ErrorKind::invalid_design, "interaction terms need at least 2 distinct factors");
      }
      for (std::size_t a : t.factors) {
        for (std::size_t b : t.factors) {
          if (a != b && detail::nested_within(factors_, a, b)) {
            fail(ErrorKind::invalid_design, "interaction between '" + factors_[b].name + "' and nested '" +
                                                factors_[a].name + "' does not exist");
          }
        }
      }
      t.order = detail::make_term(factors_, t.factors).order;
    } else {
      if (t.factors.size() != 1) fail(ErrorKind::invalid_design, "main/nested terms have exactly one factor");
      const bool nested = factors_[t.factors.front()].nested_in.has_value();
      if (nested != (t.kind == TermKind::nested)) {
        fail(ErrorKind::invalid_design, "term kind for factor '" + factors_[t.factors.front()].name +
                                            "' does not match its nesting");
      }
      t.order = detail::factor_order(factors_, t.factors.front());
    }
    for (std::size_t j = 1; j < i; ++j) {
      if (terms_[j] == t) fail(ErrorKind::invalid_design, "duplicate term '" + term_name(t) + "'");
    }
  }
  for (std::size_t i = 1; i < terms_.size(); ++i) {
    dof_of_term(*this, terms_[i]);
    detail::reference_index_checked(*this, terms_[i]);
  }
  residual_dof(*this);
}

/// Raw design table as read from CSV: one label per sample and factor column.
struct DesignTable {
  std::vector<std::string> sample_ids;
  std::vector<std::string> factor_names;
  std::vector<std::vector<std::string>> rows;
};

struct DesignOptions {
  std::set<std::string> random_factors;
  std::set<std::string> ordinal_factors;
  std::map<std::string, std::string> nesting;    // child -> parent, merged with the formula
  std::map<std::string, std::string> baselines;  // factor -> level label
  bool hierarchy_closure = true;
};

/// Builds a DesignSpec from a label table and a model formula. Only factors
/// referenced by the formula become design factors; levels are ordered by
/// first appearance in the table.
inline DesignSpec build_design(const DesignTable& table, std::string_view formula,
                               const DesignOptions& options = {}) {
  auto nesting = options.nesting;
  for (const auto& [child, parent] : formula_nesting(formula)) {
    auto [it, inserted] = nesting.emplace(child, parent);
    if (!inserted && it->second != parent) {
      fail(ErrorKind::formula, "formula nesting of '" + child + "' conflicts with configured nesting");
    }
  }
  const auto used = formula_factor_names(formula);
  std::vector<std::size_t> columns;
  std::vector<Factor> factors;
  for (const auto& name : used) {
    auto it = std::find(table.factor_names.begin(), table.factor_names.end(), name);
    if (it == table.factor_names.end()) {
      fail(ErrorKind::formula, "unknown factor '" + name + "' (not a column of the design table)");
    }
    columns.push_back(static_cast<std::size_t>(it - table.factor_names.begin()));
    Factor f;
    f.name = name;
    f.nature = options.random_factors.count(name) ? FactorNature::random : FactorNature::fixed;
    f.kind = options.ordinal_factors.count(name) ? FactorKind::ordinal : FactorKind::nominal;
    if (auto n = nesting.find(name); n != nesting.end()) f.nested_in = n->second;
    factors.push_back(std::move(f));
  }
  for (const auto& r : options.random_factors) {
    if (std::find(used.begin(), used.end(), r) == used.end()) {
      fail(ErrorKind::invalid_argument, "random factor '" + r + "' is not part of the model");
    }
  }

  std::vector<std::unordered_map<std::string, std::size_t>> level_index(factors.size());
  std::vector<std::vector<std::size_t>> assignments;
  for (std::size_t s = 0; s < table.rows.size(); ++s) {
    const auto& row = table.rows[s];
    std::vector<std::size_t> a(factors.size());
    for (std::size_t f = 0; f < factors.size(); ++f) {
      const std::string& label = row.at(columns[f]);
      if (label.empty() || label == "NA") {
        fail(ErrorKind::invalid_design, "sample '" + table.sample_ids.at(s) + "' has no level for factor '" +
                                            factors[f].name + "'");
      }
      auto [it, inserted] = level_index[f].emplace(label, factors[f].levels.size());
      if (inserted) factors[f].levels.push_back(label);
      a[f] = it->second;
    }
    assignments.push_back(std::move(a));
  }
  for (auto& f : factors) {
    if (auto b = options.baselines.find(f.name); b != options.baselines.end()) {
      auto it = std::find(f.levels.begin(), f.levels.end(), b->second);
      if (it == f.levels.end()) {
        fail(ErrorKind::invalid_argument, "baseline '" + b->second + "' is not a level of '" + f.name + "'");
      }
      f.baseline = static_cast<std::size_t>(it - f.levels.begin());
    }
  }
  auto terms = parse_model_formula(formula, factors, options.hierarchy_closure);
  return DesignSpec::create(std::move(factors), std::move(terms), std::move(assignments), table.sample_ids);
}

}  // namespace asca
