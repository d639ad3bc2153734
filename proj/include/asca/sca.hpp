#pragma once

// Component models of effect matrices and of the residual matrix.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>

#include "asca/design.hpp"
#include "asca/error.hpp"
#include "asca/glm.hpp"
#include "asca/pca.hpp"

namespace asca {

struct ScaModel {
  std::size_t term = 0;
  std::optional<std::size_t> augmentation_term;  // nullopt: residuals
  Eigen::MatrixXd effect;                        // the matrix the components were fitted on
  Eigen::MatrixXd augmentation;
  Eigen::MatrixXd loadings;                      // vars x r
  Eigen::MatrixXd scores;                        // samples x r
  Eigen::MatrixXd augmented_scores;              // (effect + augmentation) * loadings
  Eigen::VectorXd explained;                     // fraction of effect SS per component
  Eigen::VectorXd scree;                         // term-DoF many singular values, zero padded
  double effect_ss = 0.0;

  std::size_t n_components() const { return static_cast<std::size_t>(loadings.cols()); }
};

/// Truncated SVD of one term's effect matrix. The effect matrix is used as is
/// unless `center` is set. Augmentation adds the reference term's effect matrix
/// (residuals when the reference is the residual term).
inline ScaModel fit_sca(const Decomposition& d, std::size_t term, std::size_t r, const DesignSpec& spec,
                        bool center = false) {
  if (term == 0 || term >= spec.terms().size()) fail(ErrorKind::invalid_argument, "component models need a model term");
  const Term& t = spec.terms()[term];
  const std::size_t dof = dof_of_term(spec, t);
  if (r > dof) {
    fail(ErrorKind::invalid_argument, "term '" + spec.term_name(t) + "' has " + std::to_string(dof) +
                                          " degrees of freedom; cannot fit " + std::to_string(r) + " components");
  }
  ScaModel m;
  m.term = term;
  m.effect = d.effects[term];
  if (center) m.effect = m.effect.rowwise() - m.effect.colwise().mean();
  m.effect_ss = m.effect.squaredNorm();
  const double scale = std::max(1.0, d.residuals.squaredNorm() + d.reconstruct().squaredNorm());
  if (!(m.effect_ss > 1e-24 * scale)) {
    fail(ErrorKind::degenerate_data, "effect matrix of '" + spec.term_name(t) + "' is zero");
  }
  ComponentFit fit = fit_components(m.effect, r);
  m.loadings = std::move(fit.loadings);
  m.scores = std::move(fit.scores);
  m.explained = fit.singular_values.head(static_cast<Eigen::Index>(r)).array().square() / m.effect_ss;
  m.scree = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dof));
  const Eigen::Index shown = std::min<Eigen::Index>(static_cast<Eigen::Index>(dof), fit.singular_values.size());
  m.scree.head(shown) = fit.singular_values.head(shown);

  m.augmentation_term = reference_index(spec, term);
  m.augmentation = m.augmentation_term ? d.effects[*m.augmentation_term] : d.residuals;
  m.augmented_scores = (m.effect + m.augmentation) * m.loadings;
  return m;
}

struct DqStatistics {
  Eigen::VectorXd d;
  Eigen::VectorXd q;
};

/// D from augmented scores against the unaugmented score covariance; Q from
/// the augmented samples' residual outside the loading subspace.
inline DqStatistics dq_statistics(const ScaModel& model, const Eigen::MatrixXd& augmentation) {
  if (augmentation.rows() != model.effect.rows() || augmentation.cols() != model.effect.cols()) {
    fail(ErrorKind::invalid_argument, "augmentation matrix shape does not match the effect matrix");
  }
  const Eigen::MatrixXd augmented = model.effect + augmentation;
  return {d_statistic(model.scores, augmented * model.loadings), q_statistic(augmented, model.loadings)};
}

inline DqStatistics dq_statistics(const ScaModel& model) { return dq_statistics(model, model.augmentation); }

struct ResidualPca {
  ComponentFit fit;
  Eigen::VectorXd explained;  // fraction of centered residual SS per component
};

/// Mean-centered PCA of the residual matrix.
inline ResidualPca residual_pca(const Decomposition& d, std::size_t r) {
  const Eigen::MatrixXd centered = d.residuals.rowwise() - d.residuals.colwise().mean();
  const double ss = centered.squaredNorm();
  const double scale = std::max(1.0, d.reconstruct().squaredNorm());
  if (!(ss > 1e-24 * scale)) fail(ErrorKind::degenerate_data, "residual matrix is zero");
  ResidualPca out;
  out.fit = fit_components(centered, r);
  out.explained = out.fit.singular_values.head(static_cast<Eigen::Index>(r)).array().square() / ss;
  return out;
}

/// Per-sample residual sum of squares.
inline Eigen::VectorXd residual_q(const Decomposition& d) { return d.residuals.rowwise().squaredNorm(); }

}  // namespace asca
