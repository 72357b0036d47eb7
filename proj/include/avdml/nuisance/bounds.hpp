#pragma once

#include <string>

#include "avdml/nuisance/gbt.hpp"
#include "avdml/nuisance/linear.hpp"

namespace avdml::nuisance {

/// Arm regression for the Gamma-selection bounds: boosted fit of
/// argmin_g E[(Y-g)_+^2 + w (Y-g)_-^2 | arm, X] on the arm's rows.
/// `weight` is Gamma for a lower bound and 1/Gamma for an upper bound.
inline FittedNuisance fit_g1_gamma(const Dataset& arm_rows, double weight, const LearnerSpec& spec) {
  if (arm_rows.rows() == 0) throw FitError("fit_g1_gamma: no rows in the arm");
  if (!(weight > 0.0)) throw ParameterError("fit_g1_gamma: weight must be positive");
  return fit_gbt(arm_rows, GammaLoss{weight}, spec);
}

inline FittedNuisance fit_g1_gamma(const Dataset& arm_rows, GammaParam gamma, const LearnerSpec& spec) {
  return fit_g1_gamma(arm_rows, gamma.gamma, spec);
}

/// nu(X) = P(Y >= g(X) | arm, X) + w P(Y < g(X) | arm, X).
///
/// The probability is a logistic fit on labels 1{y >= g(x)} with g the fitted
/// arm regression; outputs are mapped through p + w (1 - p) and clamped to
/// [min(1,w), max(1,w)].
inline FittedNuisance fit_nu(const Dataset& arm_rows, const FittedNuisance& g, double weight,
                             const LearnerSpec& spec) {
  if (arm_rows.rows() == 0) throw FitError("fit_nu: no rows in the arm");
  if (!(weight > 0.0)) throw ParameterError("fit_nu: weight must be positive");
  Dataset labelled;
  labelled.x = arm_rows.x;
  labelled.ids = arm_rows.ids;
  labelled.y.resize(arm_rows.rows());
  const Eigen::VectorXd fitted = g.predict(arm_rows.x);
  for (Eigen::Index i = 0; i < arm_rows.rows(); ++i) {
    labelled.y(i) = arm_rows.y(i) >= fitted(i) ? 1.0 : 0.0;
  }
  LearnerSpec logistic = spec;
  logistic.kind = LearnerKind::logistic;
  FittedNuisance out = fit_logistic(labelled, logistic);
  out.set_nu_weight(weight);
  return out;
}

inline FittedNuisance fit_nu(const Dataset& arm_rows, const FittedNuisance& g, GammaParam gamma,
                             const LearnerSpec& spec) {
  return fit_nu(arm_rows, g, gamma.gamma, spec);
}

/// Dispatch on spec.kind for plain regression / classification roles.
/// Boosted fits use squared loss.
inline FittedNuisance fit_learner(const Dataset& data, const LearnerSpec& spec) {
  switch (spec.kind) {
    case LearnerKind::ridge:
      return fit_ridge(data, spec);
    case LearnerKind::logistic:
      return fit_logistic(data, spec);
    case LearnerKind::gbt:
      return fit_gbt(data, SquaredLoss{}, spec);
  }
  throw ParameterError("unknown learner kind");
}

}  // namespace avdml::nuisance
