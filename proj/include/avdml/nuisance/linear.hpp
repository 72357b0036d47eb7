#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "avdml/nuisance/model.hpp"

namespace avdml::nuisance {

/// Ridge regression: minimizes mean squared error + lambda ||coef||^2. The
/// intercept is not penalized (fit on centered data).
inline FittedNuisance fit_ridge(const Dataset& data, const LearnerSpec& spec) {
  spec.validate();
  const Eigen::Index n = data.rows();
  if (n == 0) throw FitError("fit_ridge: empty data");
  const double nd = static_cast<double>(n);
  const Eigen::RowVectorXd x_mean = data.x.colwise().mean();
  const double y_mean = data.y.mean();
  const Eigen::MatrixXd xc = data.x.rowwise() - x_mean;
  const Eigen::VectorXd yc = data.y.array() - y_mean;

  LinearModel model;
  const Eigen::Index d = data.cols();
  if (d == 0) {
    model.coef = Eigen::VectorXd(0);
  } else {
    Eigen::MatrixXd gram = xc.transpose() * xc / nd;
    gram.diagonal().array() += spec.lambda;
    const Eigen::VectorXd rhs = xc.transpose() * yc / nd;
    if (spec.lambda > 0.0) {
      model.coef = gram.ldlt().solve(rhs);
    } else {
      model.coef = gram.completeOrthogonalDecomposition().solve(rhs);
    }
  }
  model.intercept = y_mean - x_mean.dot(model.coef);
  if (!std::isfinite(model.intercept) || !model.coef.allFinite()) {
    throw FitError("fit_ridge: non-finite coefficients");
  }
  FittedNuisance out(std::move(model), Link::identity);
  out.set_training_ids(data.ids);
  return out;
}

namespace detail {

// log(1 + exp(v)) without overflow.
inline double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

/// Ridge-penalized logistic regression fit by damped Newton iterations.
///
/// Maximizes mean log-likelihood - lambda ||coef||^2 (intercept unpenalized)
/// until the gradient norm drops to 1e-8 or 100 iterations pass. Predictions
/// are clipped to [eps, 1 - eps].
inline FittedNuisance fit_logistic(const Dataset& data, const LearnerSpec& spec) {
  spec.validate();
  const Eigen::Index n = data.rows();
  if (n == 0) throw FitError("fit_logistic: empty data");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.y(i) != 0.0 && data.y(i) != 1.0) throw FitError("fit_logistic: labels must be 0/1");
  }
  const Eigen::Index d = data.cols();
  const double nd = static_cast<double>(n);
  Eigen::MatrixXd design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = data.x;

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, 2.0 * spec.lambda);
  penalty(0) = 0.0;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = design * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += data.y(i) * eta(i) - detail::softplus(eta(i));
    return ll / nd - 0.5 * beta.dot(penalty.cwiseProduct(beta));
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  double current = objective(beta);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = detail::sigmoid(eta(i));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad =
        design.transpose() * (data.y - p) / nd - penalty.cwiseProduct(beta);
    if (grad.norm() <= 1e-8) break;
    Eigen::MatrixXd hess = design.transpose() * w.asDiagonal() * design / nd;
    hess.diagonal() += penalty;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      const Eigen::VectorXd trial = beta + t * step;
      const double value = objective(trial);
      if (value >= current) {
        beta = trial;
        current = value;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (!beta.allFinite()) throw FitError("fit_logistic: non-finite coefficients");

  if (spec.lambda == 0.0) {
    // Without a penalty a perfectly separated sample drives the coefficients
    // to infinity; the iterations stop only because the gradient vanishes.
    const Eigen::VectorXd eta = design * beta;
    bool separated = true;
    for (Eigen::Index i = 0; i < n && separated; ++i) {
      separated = std::abs(detail::sigmoid(eta(i)) - data.y(i)) < 1e-6;
    }
    if (separated) {
      throw FitError("fit_logistic: labels are completely separated; use a penalty lambda > 0");
    }
  }

  LinearModel model;
  model.intercept = beta(0);
  model.coef = beta.tail(d);
  FittedNuisance out(std::move(model), Link::logit);
  out.set_clip(spec.clip_eps, 1.0 - spec.clip_eps);
  out.set_training_ids(data.ids);
  return out;
}

}  // namespace avdml::nuisance
