#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>

#include "asca/error.hpp"

namespace asca {

/// Truncated SVD of a matrix: m ~= scores * loadings'.
struct ComponentFit {
  Eigen::MatrixXd loadings;         // vars x r, orthonormal columns
  Eigen::MatrixXd scores;           // samples x r
  Eigen::VectorXd singular_values;  // every singular value, descending
  double total_ss = 0.0;
};

namespace detail {

/// Each loading vector's largest-magnitude entry is made positive.
inline void fix_signs(Eigen::MatrixXd& loadings) {
  for (Eigen::Index c = 0; c < loadings.cols(); ++c) {
    Eigen::Index arg = 0;
    loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (loadings(arg, c) < 0.0) loadings.col(c) *= -1.0;
  }
}

}  // namespace detail

inline ComponentFit fit_components(const Eigen::MatrixXd& m, std::size_t r) {
  const auto max_r = static_cast<std::size_t>(std::min(m.rows(), m.cols()));
  if (r == 0) fail(ErrorKind::invalid_argument, "at least one component is required");
  if (r > max_r) {
    fail(ErrorKind::invalid_argument, "requested " + std::to_string(r) + " components but the matrix supports at most " +
                                          std::to_string(max_r));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  ComponentFit fit;
  fit.singular_values = svd.singularValues();
  fit.loadings = svd.matrixV().leftCols(static_cast<Eigen::Index>(r));
  detail::fix_signs(fit.loadings);
  fit.scores = m * fit.loadings;
  fit.total_ss = m.squaredNorm();
  return fit;
}

/// Numerical rank using the max(n,p) * eps * s_max cutoff.
inline std::size_t rank_of(const Eigen::VectorXd& singular_values, Eigen::Index rows, Eigen::Index cols) {
  if (singular_values.size() == 0 || singular_values(0) <= 0.0) return 0;
  const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() *
                     singular_values(0);
  return static_cast<std::size_t>((singular_values.array() > tol).count());
}

/// D_i = t_i' (T'T)^-1 t_i for rows t_i of `projected` against model scores T.
inline Eigen::VectorXd d_statistic(const Eigen::MatrixXd& model_scores, const Eigen::MatrixXd& projected) {
  const Eigen::MatrixXd gram = model_scores.transpose() * model_scores;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const auto& ev = eig.eigenvalues();
  if (ev.size() == 0 || ev.minCoeff() <= 1e-12 * std::max(1.0, ev.maxCoeff())) {
    fail(ErrorKind::degenerate_data, "score covariance T'T is singular (a component has zero variance)");
  }
  const Eigen::MatrixXd inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  return ((projected * inv).cwiseProduct(projected)).rowwise().sum();
}

/// Q_i = squared norm of row i of m after projection onto the loadings.
inline Eigen::VectorXd q_statistic(const Eigen::MatrixXd& m, const Eigen::MatrixXd& loadings) {
  const Eigen::MatrixXd residual = m - (m * loadings) * loadings.transpose();
  return residual.rowwise().squaredNorm();
}

}  // namespace asca
