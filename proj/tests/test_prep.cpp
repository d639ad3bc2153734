#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "asca/prep.hpp"
#include "support.hpp"

namespace asca {
namespace {

using testing::crossed_table;
using testing::gaussian;

TransformOptions tr(TransformMethod m, std::optional<double> lambda = std::nullopt, double shift = 0.0) {
  TransformOptions o;
  o.method = m;
  o.lambda = lambda;
  o.shift = shift;
  return o;
}

ScaleOptions sc(ScaleMethod m, std::string factor = "", std::string level = "") {
  ScaleOptions o;
  o.method = m;
  o.factor = std::move(factor);
  o.level = std::move(level);
  return o;
}

ImputeOptions im(ImputeMethod m, double threshold = 0.0) {
  ImputeOptions o;
  o.method = m;
  o.threshold = threshold;
  return o;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

RawResponseMatrix raw_with_missing(const Eigen::MatrixXd& values) {
  RawResponseMatrix raw = RawResponseMatrix::from(ResponseMatrix::from(values));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (std::isnan(values(i, j))) {
        raw.missing(i, j) = true;
        raw.values(i, j) = 0.0;
      }
    }
  }
  return raw;
}

ResponseMatrix column(std::initializer_list<double> v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return ResponseMatrix::from(m);
}

TEST(RawResponse, ParsesNaAsMissingAndZeroAsObserved) {
  io::CsvTable csv;
  csv.header = {"sample", "x", "y"};
  csv.rows = {{"s1", "0", "NA"}, {"s2", "1.5", "2"}};
  csv.line_numbers = {2, 3};
  const auto raw = RawResponseMatrix::from_csv(csv);
  EXPECT_FALSE(raw.missing(0, 0));
  EXPECT_EQ(raw.values(0, 0), 0.0);
  EXPECT_TRUE(raw.missing(0, 1));
  EXPECT_EQ(raw.missing_count(), 1u);
  csv.rows[1][1] = "abc";
  try {
    RawResponseMatrix::from_csv(csv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Impute, CellMeanOfObservedCellmates) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y(6, 1);
  y << 1, 2, kNaN, 7, 8, 9;
  const auto r = impute(raw_with_missing(y), spec, im(ImputeMethod::cell_mean));
  EXPECT_EQ(r.data.values(2, 0), 1.5);
  EXPECT_TRUE(r.imputed(2, 0));
  ASSERT_EQ(r.report.size(), 1u);
  EXPECT_EQ(r.report[0].sample_id, "s3");
  EXPECT_EQ(r.report[0].variable, "v1");
}

TEST(Impute, NoMissingIsIdentity) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  const Eigen::MatrixXd y = gaussian(6, 3, 4);
  for (auto m : {ImputeMethod::cell_mean, ImputeMethod::unconditional_mean, ImputeMethod::drop_rows, ImputeMethod::drop_cols}) {
    const auto r = impute(raw_with_missing(y), spec, im(m));
    EXPECT_EQ(r.data.values, y);
    EXPECT_TRUE(r.report.empty());
    EXPECT_TRUE(r.warnings.empty());
  }
}

TEST(Impute, SeveralCellsAgainstBruteForce) {
  const DesignSpec spec = build_design(crossed_table({2, 2}, [](std::size_t) { return 3; }), "A*B");
  Eigen::MatrixXd y = gaussian(12, 2, 10);
  const Eigen::MatrixXd original = y;
  y(0, 0) = kNaN;   // cell (l1, l1)
  y(1, 1) = kNaN;   // cell (l1, l1)
  y(7, 0) = kNaN;   // cell (l2, l1)
  const auto r = impute(raw_with_missing(y), spec, im(ImputeMethod::cell_mean));
  EXPECT_DOUBLE_EQ(r.data.values(0, 0), (original(1, 0) + original(2, 0)) / 2);
  EXPECT_DOUBLE_EQ(r.data.values(1, 1), (original(0, 1) + original(2, 1)) / 2);
  EXPECT_DOUBLE_EQ(r.data.values(7, 0), (original(6, 0) + original(8, 0)) / 2);
  EXPECT_EQ(r.report.size(), 3u);
  // observed entries are untouched
  for (Eigen::Index i = 0; i < 12; ++i) {
    for (Eigen::Index j = 0; j < 2; ++j) {
      if (!std::isnan(y(i, j))) {
        EXPECT_EQ(r.data.values(i, j), original(i, j));
      }
    }
  }
}

TEST(Impute, FullyMissingCellNamesCellAndVariable) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 2; }), "A");
  Eigen::MatrixXd y(4, 2);
  y << 1, 1, 2, 2, kNaN, 3, kNaN, 4;
  try {
    impute(raw_with_missing(y), spec, im(ImputeMethod::cell_mean));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_data);
    EXPECT_NE(std::string(e.what()).find("A=l2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("v1"), std::string::npos) << e.what();
  }
}

TEST(Impute, UnconditionalMean) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 2; }), "A");
  Eigen::MatrixXd y(4, 1);
  y << 1, 2, kNaN, 6;
  EXPECT_DOUBLE_EQ(impute(raw_with_missing(y), spec, im(ImputeMethod::unconditional_mean)).data.values(2, 0), 3.0);
}

TEST(Impute, DropRowsWarnsAboutImbalance) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y = gaussian(6, 2, 3);
  y(4, 1) = kNaN;
  const auto r = impute(raw_with_missing(y), spec, im(ImputeMethod::drop_rows));
  EXPECT_EQ(r.data.n_samples(), 5u);
  EXPECT_EQ(r.kept_rows, (std::vector<std::size_t>{0, 1, 2, 3, 5}));
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Impute, DropColsAboveThreshold) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y = gaussian(6, 3, 3);
  y(0, 1) = kNaN;
  y(1, 1) = kNaN;
  const auto r = impute(raw_with_missing(y), spec, im(ImputeMethod::drop_cols, 0.2));
  EXPECT_EQ(r.data.n_vars(), 2u);
  EXPECT_EQ(r.data.variables, (std::vector<std::string>{"v1", "v3"}));
  // a threshold above the missing fraction keeps the column and then fails
  EXPECT_THROW(impute(raw_with_missing(y), spec, im(ImputeMethod::drop_cols, 0.5)), Error);
}

TEST(Transform, RankWithAndWithoutTies) {
  EXPECT_EQ(transform(column({3.2, -1, 7}), tr(TransformMethod::rank)).data.values.col(0), Eigen::Vector3d(2, 1, 3));
  EXPECT_EQ(transform(column({5, 5, 9}), tr(TransformMethod::rank)).data.values.col(0), Eigen::Vector3d(1.5, 1.5, 3));
}

TEST(Transform, RankInvariantUnderMonotoneMaps) {
  const Eigen::MatrixXd y = gaussian(30, 4, 8);
  const ResponseMatrix a = ResponseMatrix::from(y);
  const ResponseMatrix b = ResponseMatrix::from((y.array() * 3.0).exp().matrix());
  EXPECT_EQ(transform(a, tr(TransformMethod::rank)).data.values, transform(b, tr(TransformMethod::rank)).data.values);
}

TEST(Transform, BoxCoxLambdaOneIsShift) {
  const auto o = tr(TransformMethod::box_cox, 1.0);
  const auto r = transform(column({0.5, 2, 9}), o);
  EXPECT_DOUBLE_EQ(r.data.values(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(r.data.values(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(r.data.values(2, 0), 8.0);
}

TEST(Transform, BoxCoxAutoPicksLogForLogNormalData) {
  const Eigen::MatrixXd y = (gaussian(400, 1, 4).array() * 0.8).exp().matrix();
  const auto r = transform(ResponseMatrix::from(y), tr(TransformMethod::box_cox));
  ASSERT_EQ(r.lambdas.size(), 1u);
  EXPECT_EQ(r.lambdas[0], 0.0);
  const auto grid = box_cox_grid();
  EXPECT_EQ(grid.size(), 9u);
  EXPECT_EQ(grid.front(), -2.0);
  EXPECT_EQ(grid.back(), 2.0);
}

TEST(Transform, DomainErrorsNameVariableAndSample) {
  try {
    transform(column({1, -2, 3}), tr(TransformMethod::log));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
    EXPECT_NE(std::string(e.what()).find("'v1'"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'s2'"), std::string::npos);
  }
  EXPECT_NO_THROW(transform(column({0, 4}), tr(TransformMethod::sqrt)));
  EXPECT_THROW(transform(column({-1, 4}), tr(TransformMethod::sqrt)), Error);
  const auto shifted = tr(TransformMethod::log, std::nullopt, 3.0);
  EXPECT_NEAR(transform(column({-2}), shifted).data.values(0, 0), 0.0, 1e-15);
}

TEST(Scale, AutoscaleGivesUnitSd) {
  const auto r = scale(ResponseMatrix::from(gaussian(25, 6, 2) * 4.0), sc(ScaleMethod::autoscale));
  for (Eigen::Index j = 0; j < 6; ++j) {
    EXPECT_NEAR(r.values.col(j).mean(), 0.0, 1e-12);
    EXPECT_NEAR(r.values.col(j).squaredNorm() / 24.0, 1.0, 1e-12);
  }
  EXPECT_NEAR(r.values.squaredNorm(), 6.0 * 24.0, 1e-9);
}

TEST(Scale, MeanCenterIsIdempotent) {
  const ResponseMatrix y = ResponseMatrix::from(gaussian(10, 3, 5).array() + 7.0);
  const auto once = scale(y, sc(ScaleMethod::mean_center));
  const auto twice = scale(once, sc(ScaleMethod::mean_center));
  EXPECT_LT((once.values - twice.values).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Scale, ReferenceGroupDividesByItsSd) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  // reference level l1 holds 1, 3, 5: sd 2
  const auto r = scale(column({1, 3, 5, 10, 20, 30}), sc(ScaleMethod::reference_group, "A", "l1"), &spec);
  const double mean = 69.0 / 6.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    const double raw = std::vector<double>{1, 3, 5, 10, 20, 30}[static_cast<std::size_t>(i)];
    EXPECT_DOUBLE_EQ(r.values(i, 0), (raw - mean) / 2.0);
  }
  EXPECT_THROW(scale(column({1, 3, 5, 10, 20, 30}), sc(ScaleMethod::reference_group, "A", "zz"), &spec), Error);
}

TEST(Scale, ZeroVarianceColumnsAreListed) {
  Eigen::MatrixXd y = gaussian(5, 3, 1);
  y.col(0).setConstant(2.0);
  y.col(2).setConstant(-1.0);
  try {
    scale(ResponseMatrix::from(y), sc(ScaleMethod::autoscale));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_data);
    EXPECT_NE(std::string(e.what()).find("v1, v3"), std::string::npos) << e.what();
  }
}

TEST(Preprocess, StepsRunInDeclaredOrder) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y = (gaussian(6, 2, 9).array() + 5.0).matrix();
  y(1, 0) = kNaN;
  PreprocessPlan plan;
  plan.steps = {im(ImputeMethod::cell_mean), tr(TransformMethod::log),
                sc(ScaleMethod::autoscale)};
  const auto r = preprocess(raw_with_missing(y), spec, plan);
  EXPECT_EQ(r.report.size(), 1u);
  EXPECT_NEAR(r.data.values.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(r.data.values.col(0).squaredNorm(), 5.0, 1e-12);
  const double filled = (y(0, 0) + y(2, 0)) / 2.0;
  Eigen::VectorXd logs = y.col(0);
  logs(1) = filled;
  logs = logs.array().log();
  const double sd = std::sqrt((logs.array() - logs.mean()).square().sum() / 5.0);
  EXPECT_NEAR(r.data.values(1, 0), (std::log(filled) - logs.mean()) / sd, 1e-12);
}

TEST(Preprocess, MissingValuesNeedAnImputeStepFirst) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y = gaussian(6, 2, 9);
  y(1, 0) = kNaN;
  PreprocessPlan plan;
  plan.steps = {sc(ScaleMethod::mean_center)};
  EXPECT_THROW(preprocess(raw_with_missing(y), spec, plan), Error);
  plan.steps.push_back(im(ImputeMethod::cell_mean));
  EXPECT_THROW(preprocess(raw_with_missing(y), spec, plan), Error);
}

TEST(Preprocess, DroppedRowsShrinkTheDesign) {
  const DesignSpec spec = build_design(crossed_table({2}, [](std::size_t) { return 3; }), "A");
  Eigen::MatrixXd y = gaussian(6, 2, 9);
  y(5, 0) = kNaN;
  PreprocessPlan plan;
  plan.steps = {im(ImputeMethod::drop_rows)};
  const auto r = preprocess(raw_with_missing(y), spec, plan);
  EXPECT_EQ(r.design.n_samples(), 5u);
  EXPECT_EQ(r.data.n_samples(), 5u);
}

TEST(Outliers, RankOneDataHasZeroQ) {
  const Eigen::MatrixXd y = gaussian(20, 1, 3) * gaussian(1, 6, 4);
  const auto r = outlier_diagnostics(y, 1);
  EXPECT_LT(r.q.maxCoeff(), 1e-20);
  EXPECT_GE(r.d.minCoeff(), 0.0);
  EXPECT_THROW(outlier_diagnostics(y, 2), Error);
}

TEST(Outliers, PlantedSampleIsFlagged) {
  Eigen::MatrixXd y = gaussian(100, 1, 3) * gaussian(1, 8, 4) + 0.05 * gaussian(100, 8, 5);
  y.row(37) += 3.0 * gaussian(1, 8, 6);
  const auto r = outlier_diagnostics(y, 1);
  ASSERT_FALSE(r.flagged.empty());
  Eigen::Index worst = 0;
  r.q.maxCoeff(&worst);
  EXPECT_EQ(worst, 37);
  EXPECT_NE(std::find(r.flagged.begin(), r.flagged.end(), 37u), r.flagged.end());
}

TEST(Outliers, QSumsToTruncationResidual) {
  const Eigen::MatrixXd y = gaussian(30, 7, 12);
  const auto r = outlier_diagnostics(y, 3);
  const Eigen::MatrixXd centered = y.rowwise() - y.colwise().mean();
  const double truncation = centered.squaredNorm() - r.model.singular_values.head(3).squaredNorm();
  EXPECT_NEAR(r.q.sum(), truncation, 1e-9 * centered.squaredNorm());
  EXPECT_GE(r.q.minCoeff(), 0.0);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_EQ(empirical_quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_EQ(empirical_quantile({5}, 0.99), 5.0);
  EXPECT_DOUBLE_EQ(empirical_quantile({0, 10}, 0.99), 9.9);
}

}  // namespace
}  // namespace asca
