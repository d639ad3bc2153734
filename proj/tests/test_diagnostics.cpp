#include <gtest/gtest.h>

#include "asca/diagnostics.hpp"
#include "support.hpp"

namespace asca {
namespace {

using testing::crossed_table;
using testing::gaussian;

struct Fitted {
  DesignSpec spec;
  Decomposition d;
};

Fitted fit(const Eigen::MatrixXd& y) {
  DesignSpec spec = build_design(crossed_table({3, 2}, [&](std::size_t) { return static_cast<std::size_t>(y.rows() / 6); }), "A*B");
  Decomposition d = fit_ols(spec, build_model_matrix(spec, CodingScheme::sum), ResponseMatrix::from(y));
  return {std::move(spec), std::move(d)};
}

TEST(Assumptions, GaussianResidualsLookNormal) {
  const auto f = fit(gaussian(120, 10, 3));
  const auto r = check_assumptions(f.d, f.spec);
  EXPECT_GT(r.qq_correlation, 0.99);
  EXPECT_EQ(r.qq.size(), 1200u);
  EXPECT_TRUE(r.normality_ok);
  EXPECT_TRUE(r.variance_ok);
  EXPECT_TRUE(r.warnings.empty());
  for (std::size_t i = 1; i < r.qq.size(); ++i) EXPECT_LE(r.qq[i - 1].sample, r.qq[i].sample);
}

TEST(Assumptions, InflatedCellRaisesVarianceFlag) {
  Eigen::MatrixXd y = gaussian(120, 10, 4);
  // the first full cell (A=l1, B=l1) holds rows 0..19; sd x sqrt(10) gives 10x variance
  y.topRows(20) *= std::sqrt(10.0);
  const auto f = fit(y);
  const auto r = check_assumptions(f.d, f.spec);
  EXPECT_FALSE(r.variance_ok);
  EXPECT_GT(r.variance_ratio, 4.0);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Assumptions, HeavyTailsFailNormality) {
  Eigen::MatrixXd y = gaussian(120, 10, 5);
  y = y.array().cube();
  const auto r = check_assumptions(fit(y).d, fit(y).spec);
  EXPECT_FALSE(r.normality_ok);
  EXPECT_LT(r.qq_correlation, 0.99);
}

TEST(Assumptions, ZeroResidualsPassTrivially) {
  const DesignSpec spec = build_design(crossed_table({3, 2}, [](std::size_t) { return 2; }), "A*B");
  Eigen::MatrixXd y(12, 2);
  for (Eigen::Index i = 0; i < 12; ++i) y.row(i).setConstant(static_cast<double>(spec.full_cells()[static_cast<std::size_t>(i)]));
  const auto d = fit_ols(spec, build_model_matrix(spec, CodingScheme::sum), ResponseMatrix::from(y));
  const auto r = check_assumptions(d, spec);
  EXPECT_TRUE(r.normality_ok);
  EXPECT_TRUE(r.variance_ok);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Assumptions, OneBoxPerFactorLevel) {
  const auto f = fit(gaussian(60, 4, 6));
  const auto r = check_assumptions(f.d, f.spec);
  ASSERT_EQ(r.boxes.size(), 5u);
  EXPECT_EQ(r.boxes[0].factor, "A");
  EXPECT_EQ(r.boxes[0].n, 20u);
  EXPECT_EQ(r.boxes[4].factor, "B");
  EXPECT_EQ(r.boxes[4].n, 30u);
  for (const auto& b : r.boxes) {
    EXPECT_LE(b.q.min, b.q.q1);
    EXPECT_LE(b.q.q1, b.q.median);
    EXPECT_LE(b.q.median, b.q.q3);
    EXPECT_LE(b.q.q3, b.q.max);
  }
  EXPECT_EQ(r.sample_q.size(), 60);
}

}  // namespace
}  // namespace asca
