#pragma once
/*
Robbins normal-mixture confidence-sequence boundaries.

For a running mean of n iid terms with unit variance, the normal mixture with
scale rho gives the time-uniform radius

  r_n = sqrt( 2 (n rho^2 + 1) / (n^2 rho^2) * log( sqrt(n rho^2 + 1) / alpha ) )

and for a d-dimensional parameter the squared Mahalanobis threshold

  t_n = 2 (n rho^2 + 1) / (n^2 rho^2) * log( (n rho^2 + 1)^(d/2) / alpha ).

Intervals are theta_hat +/- sigma_hat * r_n. Natural logs throughout.
*/

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avdml/errors.hpp"

namespace avdml {

struct MixtureParams {
  double rho = 1.0;
  double alpha = 0.05;
  int dim = 1;

  void validate() const {
    if (!(rho > 0.0) || !std::isfinite(rho)) {
      throw ParameterError("mixture scale rho must be positive and finite, got " +
                           std::to_string(rho));
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw ParameterError("alpha must lie in (0,1), got " + std::to_string(alpha));
    }
    if (dim < 1) {
      throw ParameterError("dimension must be >= 1, got " + std::to_string(dim));
    }
  }
};

/// Which closed form the scalar radius uses.
///
/// `robbins_mixture` is the d = 1 member of the region family and the default.
/// `printed_scalar` evaluates sqrt((2 n rho^2 + 1)/(n^2 rho^2) log((n rho^2 + 1)/alpha)),
/// kept for reproducing numbers computed with that variant.
enum class BoundaryForm { robbins_mixture, printed_scalar };

namespace detail {

inline void check_sample_size(std::int64_t n) {
  if (n < 1) throw ParameterError("sample size must be >= 1, got " + std::to_string(n));
}

// 2 (x + 1) / (n x) with x = n rho^2, i.e. 2(n rho^2 + 1)/(n^2 rho^2).
inline double mixture_prefactor(double n, double x) { return 2.0 * (x + 1.0) / (n * x); }

}  // namespace detail

/// Squared-norm threshold of the d-dimensional confidence region at sample size n.
inline double region_threshold(std::int64_t n, const MixtureParams& params) {
  detail::check_sample_size(n);
  params.validate();
  const double nd = static_cast<double>(n);
  const double x = nd * params.rho * params.rho;
  // log((x+1)^(d/2) / alpha) split into two nonnegative terms.
  const double log_term = 0.5 * params.dim * std::log1p(x) - std::log(params.alpha);
  return detail::mixture_prefactor(nd, x) * log_term;
}

/// Half-width of the scalar confidence sequence at sample size n.
inline double scalar_radius(std::int64_t n, const MixtureParams& params, double sigma_hat,
                            BoundaryForm form = BoundaryForm::robbins_mixture) {
  detail::check_sample_size(n);
  params.validate();
  if (!(sigma_hat >= 0.0)) {
    throw ParameterError("sigma_hat must be nonnegative, got " + std::to_string(sigma_hat));
  }
  const double nd = static_cast<double>(n);
  const double x = nd * params.rho * params.rho;
  double unit = 0.0;
  switch (form) {
    case BoundaryForm::robbins_mixture:
      unit = detail::mixture_prefactor(nd, x) * (0.5 * std::log1p(x) - std::log(params.alpha));
      break;
    case BoundaryForm::printed_scalar:
      unit = (2.0 * x + 1.0) / (nd * x) * (std::log1p(x) - std::log(params.alpha));
      break;
  }
  return sigma_hat * std::sqrt(unit);
}

/// Mixture scale that makes the boundary tight around the first peeking time m:
///
///   rho_m = sqrt( (-2 log alpha + log(-2 log alpha) + 1) / (sigma_m^2 * m * log(max(m, e))) )
inline double tune_rho(double alpha, std::int64_t m, double sigma_sq_m) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ParameterError("alpha must lie in (0,1) for rho tuning, got " + std::to_string(alpha));
  }
  if (m < 1) throw ParameterError("peeking time m must be >= 1, got " + std::to_string(m));
  if (!(sigma_sq_m > 0.0) || !std::isfinite(sigma_sq_m)) {
    throw ParameterError("variance at the peeking time must be positive, got " +
                         std::to_string(sigma_sq_m));
  }
  const double two_log = -2.0 * std::log(alpha);
  const double numerator = two_log + std::log(two_log) + 1.0;
  if (!(numerator > 0.0)) {
    throw ParameterError("alpha too close to 1 for rho tuning (numerator " +
                         std::to_string(numerator) + ")");
  }
  const double md = static_cast<double>(m);
  const double log_m = std::log(std::max(md, std::numbers::e));
  return std::sqrt(numerator / (sigma_sq_m * md * log_m));
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  // Set when a running intersection has crossed over (lower > upper).
  bool empty = false;

  double width() const { return empty ? 0.0 : upper - lower; }
  bool contains(double v) const { return !empty && lower <= v && v <= upper; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Running intersection of a history of intervals. Crossed intervals are kept
/// with `empty` set and their raw (lower > upper) bounds intact.
inline std::vector<Interval> intersect(std::span<const Interval> history) {
  std::vector<Interval> out;
  out.reserve(history.size());
  for (const Interval& cur : history) {
    if (out.empty()) {
      out.push_back({cur.lower, cur.upper, cur.empty || cur.lower > cur.upper});
      continue;
    }
    const Interval& prev = out.back();
    Interval next{std::max(prev.lower, cur.lower), std::min(prev.upper, cur.upper), false};
    next.empty = prev.empty || cur.empty || next.lower > next.upper;
    out.push_back(next);
  }
  return out;
}

}  // namespace avdml
