#pragma once

// Residual checks: Q-Q data, per-level residual Q summaries, order series and
// summary flags for normality and unequal cell variances.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "asca/design.hpp"
#include "asca/glm.hpp"
#include "asca/prep.hpp"
#include "asca/sca.hpp"

namespace asca {

struct QqPoint {
  double theoretical = 0.0;
  double sample = 0.0;
};

struct FiveNumber {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

struct LevelSummary {
  std::string factor;
  std::string level;
  std::size_t n = 0;
  FiveNumber q;
};

struct AssumptionReport {
  std::vector<QqPoint> qq;
  double qq_correlation = 1.0;
  std::vector<LevelSummary> boxes;
  Eigen::VectorXd sample_q;  // residual Q per sample, in sample order
  double jarque_bera = 0.0;
  double normality_p = 1.0;
  bool normality_ok = true;
  double variance_ratio = 1.0;  // max / min of the mean residual Q per full cell
  bool variance_ok = true;
  std::vector<std::string> warnings;
};

struct AssumptionOptions {
  double normality_alpha = 0.01;
  double max_variance_ratio = 4.0;
};

inline FiveNumber five_number(const std::vector<double>& v) {
  return {*std::min_element(v.begin(), v.end()), empirical_quantile(v, 0.25), empirical_quantile(v, 0.5),
          empirical_quantile(v, 0.75), *std::max_element(v.begin(), v.end())};
}

inline AssumptionReport check_assumptions(const Decomposition& d, const DesignSpec& spec,
                                          const AssumptionOptions& options = {}) {
  AssumptionReport r;
  const Eigen::MatrixXd& e = d.residuals;
  r.sample_q = residual_q(d);

  // residual columns at rounding-noise level relative to the data are skipped
  const double negligible = 1e-10 * std::max(1.0, d.reconstruct().cwiseAbs().maxCoeff());
  std::vector<double> pooled;
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    const double mean = e.col(j).mean();
    const double ss = (e.col(j).array() - mean).square().sum();
    const double sd = e.rows() > 1 ? std::sqrt(ss / static_cast<double>(e.rows() - 1)) : 0.0;
    if (!(sd > negligible)) continue;
    for (Eigen::Index i = 0; i < e.rows(); ++i) pooled.push_back((e(i, j) - mean) / sd);
  }

  if (pooled.size() >= 3) {
    std::sort(pooled.begin(), pooled.end());
    const auto n = static_cast<double>(pooled.size());
    const boost::math::normal_distribution<double> gauss;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      const double x = boost::math::quantile(gauss, (static_cast<double>(i) + 0.5) / n);
      const double y = pooled[i];
      r.qq.push_back({x, y});
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    r.qq_correlation = vx > 0 && vy > 0 ? cov / std::sqrt(vx * vy) : 1.0;

    double m2 = 0, m3 = 0, m4 = 0;
    const double mean = sy / n;
    for (double v : pooled) {
      const double c = v - mean;
      m2 += c * c;
      m3 += c * c * c;
      m4 += c * c * c * c;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    const double skew = m3 / std::pow(m2, 1.5);
    const double kurt = m4 / (m2 * m2);
    r.jarque_bera = n / 6.0 * (skew * skew + (kurt - 3.0) * (kurt - 3.0) / 4.0);
    // chi-square(2) survival function
    r.normality_p = std::exp(-r.jarque_bera / 2.0);
    r.normality_ok = r.normality_p >= options.normality_alpha;
  }

  for (std::size_t f = 0; f < spec.factors().size(); ++f) {
    const Factor& factor = spec.factors()[f];
    for (std::size_t l = 0; l < factor.levels.size(); ++l) {
      std::vector<double> q;
      for (std::size_t i = 0; i < spec.n_samples(); ++i) {
        if (spec.level(i, f) == l) q.push_back(r.sample_q(static_cast<Eigen::Index>(i)));
      }
      if (!q.empty()) r.boxes.push_back({factor.name, factor.levels[l], q.size(), five_number(q)});
    }
  }

  std::map<std::size_t, std::pair<double, std::size_t>> cell_q;
  const auto cells = spec.full_cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& c = cell_q[cells[i]];
    c.first += r.sample_q(static_cast<Eigen::Index>(i));
    ++c.second;
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& [cell, acc] : cell_q) {
    const double m = acc.first / static_cast<double>(acc.second);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  if (hi > negligible * negligible) r.variance_ratio = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  r.variance_ok = r.variance_ratio <= options.max_variance_ratio;

  if (!r.normality_ok) {
    r.warnings.push_back("pooled residuals deviate from normality (Jarque-Bera p = " + io::format_sig(r.normality_p) +
                         ")");
  }
  if (!r.variance_ok) {
    r.warnings.push_back("residual variance differs across cells (max/min ratio " + io::format_sig(r.variance_ratio) +
                         ")");
  }
  return r;
}

}  // namespace asca
