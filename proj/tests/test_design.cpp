#include <gtest/gtest.h>

#include <random>

#include "asca/design.hpp"
#include "support.hpp"

namespace asca {
namespace {

using testing::crossed_table;
using testing::kRepeatedMeasuresModel;
using testing::random_patient;
using testing::repeated_measures_table;

Factor factor(const std::string& name, std::size_t levels, std::optional<std::string> parent = std::nullopt,
              FactorNature nature = FactorNature::fixed) {
  Factor f;
  f.name = name;
  f.nature = nature;
  f.nested_in = std::move(parent);
  for (std::size_t l = 0; l < levels; ++l) f.levels.push_back(name + std::to_string(l + 1));
  return f;
}

std::vector<std::string> names(const DesignSpec& spec) {
  std::vector<std::string> out;
  for (const auto& t : spec.terms()) out.push_back(spec.term_name(t));
  return out;
}

TEST(Dof, OneWayFactor) {
  const DesignSpec spec = build_design(crossed_table({3}, [](std::size_t) { return 5; }), "A");
  EXPECT_EQ(dof_of_term(spec, spec.terms()[1]), 2u);
  EXPECT_EQ(residual_dof(spec), 12u);
}

TEST(Dof, RepeatedMeasuresLayoutAfterExclusions) {
  // 18 patients (9 per group) x 3 time points.
  const DesignSpec spec = build_design(repeated_measures_table(9, 3), kRepeatedMeasuresModel, random_patient());
  EXPECT_EQ(spec.n_samples(), 54u);
  EXPECT_EQ(dof_of_term(spec, spec.terms()[spec.term_index("Responder")]), 1u);
  EXPECT_EQ(dof_of_term(spec, spec.terms()[spec.term_index("Time")]), 2u);
  EXPECT_EQ(dof_of_term(spec, spec.terms()[spec.term_index("Patient(Responder)")]), 16u);
  EXPECT_EQ(dof_of_term(spec, spec.terms()[spec.term_index("Responder*Time")]), 2u);
  EXPECT_EQ(residual_dof(spec), 32u);
}

TEST(Dof, NestedExampleWithSeventySixSamples) {
  // A (2) x B (2), C (38 levels) nested in A, each C level observed under both B levels.
  DesignTable t;
  t.factor_names = {"A", "B", "C"};
  for (int c = 0; c < 38; ++c) {
    for (int b = 0; b < 2; ++b) {
      t.rows.push_back({c < 19 ? "a1" : "a2", b ? "b2" : "b1", "c" + std::to_string(c)});
      t.sample_ids.push_back("s" + std::to_string(t.rows.size()));
    }
  }
  DesignOptions o;
  o.random_factors = {"C"};
  const DesignSpec spec = build_design(t, "A + B + C(A) + A*B", o);
  std::vector<std::size_t> dofs;
  for (std::size_t i = 1; i < spec.terms().size(); ++i) dofs.push_back(dof_of_term(spec, spec.terms()[i]));
  EXPECT_EQ(dofs, (std::vector<std::size_t>{1, 1, 36, 1}));
  EXPECT_EQ(residual_dof(spec), 36u);
}

TEST(Dof, NestedFactorNeedsMoreLevelsThanParent) {
  std::vector<Factor> f{factor("A", 2), factor("C", 2, "A")};
  auto terms = parse_model_formula("A + C(A)", f);
  EXPECT_THROW(
      {
        try {
          DesignSpec::create(f, terms, {{0, 0}, {0, 0}, {1, 1}, {1, 1}});
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::invalid_design);
          throw;
        }
      },
      Error);
}

TEST(Dof, SaturatedModelHasZeroResidualDof) {
  const DesignSpec spec = build_design(crossed_table({2, 2}, [](std::size_t) { return 1; }), "A*B");
  EXPECT_EQ(residual_dof(spec), 0u);
}

TEST(Dof, OverParameterizedModel) {
  // Only the diagonal cells of a 3x3 layout are observed.
  const auto table = crossed_table({3, 3}, [](std::size_t c) { return c % 4 == 0 ? 1 : 0; });
  try {
    build_design(table, "A*B");
    FAIL() << "expected an over-parameterized design error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::over_parameterized);
  }
}

TEST(Dof, PropertySumEqualsSampleCountMinusOne) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 30; ++rep) {
    std::uniform_int_distribution<std::size_t> lv(2, 4), nf(1, 3), cnt(1, 3);
    std::vector<std::size_t> levels(nf(rng));
    for (auto& l : levels) l = lv(rng);
    std::vector<std::size_t> counts(64);
    for (auto& c : counts) c = cnt(rng) + 1;
    const DesignSpec spec =
        build_design(crossed_table(levels, [&](std::size_t c) { return counts[c]; }, &rng),
                     testing::full_formula(levels.size()));
    std::size_t total = residual_dof(spec);
    for (std::size_t t = 1; t < spec.terms().size(); ++t) total += dof_of_term(spec, spec.terms()[t]);
    EXPECT_EQ(total, spec.n_samples() - 1);
  }
}

TEST(Dof, InvariantUnderLevelRelabeling) {
  auto t1 = repeated_measures_table(4, 3);
  auto t2 = t1;
  for (auto& row : t2.rows) {
    row[0] = row[0] == "R" ? "zeta" : "alpha";
    row[2] = "X" + row[2];
  }
  const DesignSpec a = build_design(t1, kRepeatedMeasuresModel, random_patient());
  const DesignSpec b = build_design(t2, kRepeatedMeasuresModel, random_patient());
  for (std::size_t t = 1; t < a.terms().size(); ++t) {
    EXPECT_EQ(dof_of_term(a, a.terms()[t]), dof_of_term(b, b.terms()[t]));
  }
}

TEST(Reference, RepeatedMeasuresHasseDiagram) {
  const DesignSpec spec = build_design(repeated_measures_table(3, 3), kRepeatedMeasuresModel, random_patient());
  const Term patient = spec.terms()[spec.term_index("Patient(Responder)")];
  EXPECT_EQ(reference_term(spec, spec.terms()[spec.term_index("Responder")]), patient);
  EXPECT_EQ(reference_term(spec, spec.terms()[spec.term_index("Time")]).kind, TermKind::residual);
  EXPECT_EQ(reference_term(spec, spec.terms()[spec.term_index("Responder*Time")]).kind, TermKind::residual);
  EXPECT_EQ(reference_term(spec, patient).kind, TermKind::residual);
}

TEST(Reference, AllFixedDesignUsesResiduals) {
  const DesignSpec spec = build_design(crossed_table({3, 2}, [](std::size_t) { return 2; }), "A*B");
  for (std::size_t t = 1; t < spec.terms().size(); ++t) {
    EXPECT_EQ(reference_term(spec, spec.terms()[t]).kind, TermKind::residual);
  }
}

TEST(Reference, RandomInteractionBelowMainEffect) {
  DesignOptions o;
  o.random_factors = {"B"};
  const DesignSpec spec = build_design(crossed_table({3, 4}, [](std::size_t) { return 2; }), "A*B", o);
  // A*B contains the random factor B and lies below both main effects.
  EXPECT_EQ(spec.term_name(reference_term(spec, spec.terms()[spec.term_index("A")])), "A*B");
  EXPECT_EQ(spec.term_name(reference_term(spec, spec.terms()[spec.term_index("B")])), "A*B");
  EXPECT_EQ(reference_term(spec, spec.terms()[spec.term_index("A*B")]).kind, TermKind::residual);
}

TEST(Reference, NeverSelfAndAlwaysRandomOrResidual) {
  const DesignSpec spec = build_design(repeated_measures_table(3, 2), kRepeatedMeasuresModel, random_patient());
  for (std::size_t t = 1; t < spec.terms().size(); ++t) {
    const Term ref = reference_term(spec, spec.terms()[t]);
    EXPECT_FALSE(ref == spec.terms()[t]);
    EXPECT_TRUE(ref.kind == TermKind::residual || spec.is_random(ref));
  }
}

TEST(Reference, CompetingRandomTermsAreRejected) {
  DesignOptions o;
  o.random_factors = {"B", "C"};
  EXPECT_THROW(build_design(crossed_table({2, 2, 2}, [](std::size_t) { return 2; }), "A*B + A*C", o), Error);
}

TEST(Formula, RepeatedMeasuresModelHasFourTerms) {
  const DesignSpec spec = build_design(repeated_measures_table(2, 2), kRepeatedMeasuresModel, random_patient());
  EXPECT_EQ(names(spec),
            (std::vector<std::string>{"Intercept", "Responder", "Time", "Patient(Responder)", "Responder*Time"}));
  EXPECT_EQ(spec.terms()[3].order, 2);
  EXPECT_EQ(spec.terms()[4].order, 2);
}

TEST(Formula, SingleFactor) {
  const std::vector<Factor> f{factor("A", 2)};
  const auto terms = parse_model_formula("A", f);
  ASSERT_EQ(terms.size(), 2u);
  EXPECT_EQ(terms[0].kind, TermKind::intercept);
  EXPECT_EQ(terms[1].kind, TermKind::main);
}

TEST(Formula, HierarchyClosure) {
  const std::vector<Factor> f{factor("A", 2), factor("B", 3)};
  const auto closed = parse_model_formula("A*B", f);
  ASSERT_EQ(closed.size(), 4u);
  EXPECT_EQ(format_model_formula(closed, f), "A + B + A*B");
  const auto open = parse_model_formula("A*B", f, false);
  EXPECT_EQ(format_model_formula(open, f), "A*B");
}

TEST(Formula, ThreeWayClosureIncludesEverySubset) {
  const std::vector<Factor> f{factor("A", 2), factor("B", 2), factor("C", 2)};
  EXPECT_EQ(format_model_formula(parse_model_formula("A*B*C", f), f), "A + B + C + A*B + A*C + B*C + A*B*C");
}

TEST(Formula, WhitespaceInsensitive) {
  const std::vector<Factor> f{factor("A", 2), factor("B", 3)};
  EXPECT_EQ(format_model_formula(parse_model_formula("  A+B +   A * B ", f), f), "A + B + A*B");
}

TEST(Formula, PrettyPrintRoundTripIsIdempotent) {
  const std::vector<Factor> f{factor("Responder", 2), factor("Time", 3), factor("Patient", 4, "Responder")};
  const std::string once = format_model_formula(parse_model_formula(kRepeatedMeasuresModel, f), f);
  EXPECT_EQ(format_model_formula(parse_model_formula(once, f), f), once);
}

TEST(Formula, Errors) {
  const std::vector<Factor> f{factor("A", 2), factor("B", 3), factor("C", 4, "A")};
  auto kind_of = [&](const std::string& text) {
    try {
      parse_model_formula(text, f);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::io;  // sentinel: no error
  };
  EXPECT_EQ(kind_of("A + Z"), ErrorKind::formula);
  EXPECT_EQ(kind_of("A + C(A) + A*C"), ErrorKind::formula);
  EXPECT_EQ(kind_of("A + A"), ErrorKind::formula);
  EXPECT_EQ(kind_of("A + C(B)"), ErrorKind::formula);
  EXPECT_EQ(kind_of("A + "), ErrorKind::formula);
}

TEST(DesignSpec, RejectsSingleLevelFactor) {
  DesignTable t;
  t.factor_names = {"A"};
  t.rows = {{"x"}, {"x"}};
  t.sample_ids = {"1", "2"};
  EXPECT_THROW(build_design(t, "A"), Error);
}

TEST(DesignSpec, RejectsNestedLevelUnderTwoParents) {
  DesignTable t;
  t.factor_names = {"A", "C"};
  t.rows = {{"a1", "c1"}, {"a1", "c2"}, {"a2", "c1"}, {"a2", "c3"}};
  t.sample_ids = {"1", "2", "3", "4"};
  EXPECT_THROW(build_design(t, "A + C(A)"), Error);
}

TEST(DesignSpec, RejectsMissingAssignment) {
  DesignTable t;
  t.factor_names = {"A"};
  t.rows = {{"a"}, {"NA"}, {"b"}};
  t.sample_ids = {"1", "2", "3"};
  EXPECT_THROW(build_design(t, "A"), Error);
}

TEST(DesignSpec, RejectsNestingCycle) {
  std::vector<Factor> f{factor("A", 4, "B"), factor("B", 4, "A")};
  std::vector<Term> terms{Term::intercept()};
  EXPECT_THROW(DesignSpec::create(f, terms, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}), Error);
}

TEST(DesignSpec, LevelsInFirstAppearanceOrder) {
  DesignTable t;
  t.factor_names = {"A"};
  t.rows = {{"z"}, {"a"}, {"z"}, {"m"}};
  t.sample_ids = {"1", "2", "3", "4"};
  const DesignSpec spec = build_design(t, "A");
  EXPECT_EQ(spec.factors()[0].levels, (std::vector<std::string>{"z", "a", "m"}));
}

TEST(DesignSpec, SubsetDropsVanishedLevels) {
  const DesignSpec spec = build_design(repeated_measures_table(3, 2), kRepeatedMeasuresModel, random_patient());
  std::vector<std::size_t> rows;
  for (std::size_t i = 2; i < spec.n_samples(); ++i) rows.push_back(i);  // drop patient P1
  const DesignSpec sub = spec.subset(rows);
  EXPECT_EQ(sub.factors()[spec.factor_index("Patient")].levels.size(), 5u);
  EXPECT_EQ(dof_of_term(sub, sub.terms()[sub.term_index("Patient")]), 3u);
}

}  // namespace
}  // namespace asca
