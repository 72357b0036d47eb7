#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avdml/errors.hpp"

namespace avdml {

/// One record W = (Y, A, Z, X) of the stream. Z is present only for
/// instrument-based estimands.
struct Observation {
  double y = 0.0;
  int a = 0;
  std::optional<int> z;
  std::vector<double> x;
};

/// psi(W; theta, eta) = psi_a * theta + psi_b.
template <int Dim = 1>
struct LinearScore {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;

  Matrix psi_a;
  Vector psi_b;

  Vector at(const Vector& theta) const { return psi_a * theta + psi_b; }
};

using ScalarScore = LinearScore<1>;

inline ScalarScore make_scalar_score(double psi_a, double psi_b) {
  ScalarScore s;
  s.psi_a(0, 0) = psi_a;
  s.psi_b(0) = psi_b;
  return s;
}

/// Nuisance values evaluated at one observation's covariates. Each estimand
/// reads its own subset:
///   ate          g1, g0, e
///   plr          m (= E[Y|X]), e
///   late         g_t, g_c, m_t, m_c, e (e = P(Z=1|X))
///   partial-ID   g1, nu (treated arm), g0, nu0 (control arm), e
/// Fields form a vector space so perturbations eta0 + r * h can be built directly.
struct NuisanceEval {
  double g1 = 0.0;
  double g0 = 0.0;
  double e = 0.5;
  double g_t = 0.0;
  double g_c = 0.0;
  double m_t = 0.0;
  double m_c = 0.0;
  double m = 0.0;
  double nu = 1.0;
  double nu0 = 1.0;

  static NuisanceEval zero() {
    NuisanceEval z;
    z.e = 0.0;
    z.nu = 0.0;
    z.nu0 = 0.0;
    return z;
  }

  template <class F>
  static NuisanceEval zip(const NuisanceEval& l, const NuisanceEval& r, F f) {
    NuisanceEval o;
    o.g1 = f(l.g1, r.g1);
    o.g0 = f(l.g0, r.g0);
    o.e = f(l.e, r.e);
    o.g_t = f(l.g_t, r.g_t);
    o.g_c = f(l.g_c, r.g_c);
    o.m_t = f(l.m_t, r.m_t);
    o.m_c = f(l.m_c, r.m_c);
    o.m = f(l.m, r.m);
    o.nu = f(l.nu, r.nu);
    o.nu0 = f(l.nu0, r.nu0);
    return o;
  }

  friend NuisanceEval operator+(const NuisanceEval& l, const NuisanceEval& r) {
    return zip(l, r, [](double a, double b) { return a + b; });
  }
  friend NuisanceEval operator*(double s, const NuisanceEval& v) {
    return zip(v, v, [s](double a, double) { return s * a; });
  }
};

/// Sensitivity parameter of the Gamma-selection bias model.
struct GammaParam {
  double gamma = 1.0;

  explicit GammaParam(double g = 1.0) : gamma(g) {
    if (!(g >= 1.0) || !std::isfinite(g)) {
      throw ParameterError("Gamma must be finite and >= 1, got " + std::to_string(g));
    }
  }
  double inverse() const { return 1.0 / gamma; }
};

enum class Arm { treated, control };
enum class BoundSide { lower, upper };

namespace detail {

inline double positive_part(double v) { return std::max(v, 0.0); }
inline double negative_part(double v) { return std::max(-v, 0.0); }

inline void require_propensity(double e, const char* who) {
  if (!(e > 0.0 && e < 1.0)) {
    throw NuisanceError(std::string(who) + ": propensity must lie in (0,1), got " +
                        std::to_string(e));
  }
}

}  // namespace detail

/// AIPW score for the ATE: psi_a = -1,
/// psi_b = g1 - g0 + a (y - g1)/e - (1 - a)(y - g0)/(1 - e).
inline ScalarScore aipw_score(const Observation& obs, const NuisanceEval& nuis) {
  detail::require_propensity(nuis.e, "aipw_score");
  const double a = obs.a;
  const double b = nuis.g1 - nuis.g0 + a * (obs.y - nuis.g1) / nuis.e -
                   (1.0 - a) * (obs.y - nuis.g0) / (1.0 - nuis.e);
  return make_scalar_score(-1.0, b);
}

/// Partialled-out score for the partially linear model, with m = E[Y|X] and
/// e = E[A|X]: psi = (y - m - theta (a - e)) (a - e).
inline ScalarScore plr_score(const Observation& obs, const NuisanceEval& nuis) {
  const double r = obs.a - nuis.e;
  return make_scalar_score(-r * r, (obs.y - nuis.m) * r);
}

/// Instrumented (LATE) score in regression form.
inline ScalarScore late_score(const Observation& obs, const NuisanceEval& nuis) {
  if (!obs.z) throw EstimandError("late_score: observation has no instrument z");
  detail::require_propensity(nuis.e, "late_score");
  const double z = *obs.z;
  const double a = obs.a;
  const double e = nuis.e;
  const double b = nuis.g_t - nuis.g_c + z * (obs.y - nuis.g_t) / e -
                   (1.0 - z) * (obs.y - nuis.g_c) / (1.0 - e);
  const double j = nuis.m_t - nuis.m_c + z * (a - nuis.m_t) / e -
                   (1.0 - z) * (a - nuis.m_c) / (1.0 - e);
  return make_scalar_score(-j, b);
}

/// Effective loss weight for one bound: lower bounds use Gamma, upper bounds 1/Gamma.
inline double effective_gamma(GammaParam gamma, BoundSide side) {
  return side == BoundSide::lower ? gamma.gamma : gamma.inverse();
}

/// Score for one arm-mean bound under the Gamma-selection model (psi_a = -1).
///
/// Treated arm:
///   psi_b = a y + (1-a) g1 + a [(y-g1)_+ - G (y-g1)_-] / nu * (1-e)/e
/// Control arm swaps a <-> 1-a and e <-> 1-e and reads (g0, nu0).
/// G is Gamma for the lower bound and 1/Gamma for the upper bound.
inline ScalarScore partial_id_score(const Observation& obs, const NuisanceEval& nuis,
                                    GammaParam gamma, Arm arm, BoundSide side) {
  detail::require_propensity(nuis.e, "partial_id_score");
  const double g_eff = effective_gamma(gamma, side);
  const double lo = std::min(1.0, g_eff);
  const double hi = std::max(1.0, g_eff);

  const bool treated = arm == Arm::treated;
  const double in_arm = treated ? obs.a : 1.0 - obs.a;
  const double g = treated ? nuis.g1 : nuis.g0;
  const double nu = treated ? nuis.nu : nuis.nu0;
  const double odds = treated ? (1.0 - nuis.e) / nuis.e : nuis.e / (1.0 - nuis.e);
  if (!(nu >= lo && nu <= hi)) {
    throw NuisanceError("partial_id_score: nu = " + std::to_string(nu) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const double resid = obs.y - g;
  const double tilt =
      (detail::positive_part(resid) - g_eff * detail::negative_part(resid)) / nu;
  const double b = in_arm * obs.y + (1.0 - in_arm) * g + in_arm * tilt * odds;
  return make_scalar_score(-1.0, b);
}

/// Combined score for a bound on the ATE under the Gamma model:
/// lower = mu1^- - mu0^+, upper = mu1^+ - mu0^-. Variance is computed on this
/// difference directly.
inline ScalarScore pate_score(const Observation& obs, const NuisanceEval& nuis, GammaParam gamma,
                              BoundSide side) {
  const BoundSide other = side == BoundSide::lower ? BoundSide::upper : BoundSide::lower;
  const double treated = partial_id_score(obs, nuis, gamma, Arm::treated, side).psi_b(0);
  const double control = partial_id_score(obs, nuis, gamma, Arm::control, other).psi_b(0);
  return make_scalar_score(-1.0, treated - control);
}

struct LossValue {
  double value;
  double d_dg;
};

/// (y-g)_+^2 + w (y-g)_-^2 and its derivative in g. `weight` is Gamma, or
/// 1/Gamma for the swapped bound; any positive value is accepted.
inline LossValue gamma_loss(double y, double g, double weight) {
  if (!(weight > 0.0)) {
    throw ParameterError("gamma_loss weight must be positive, got " + std::to_string(weight));
  }
  const double r = y - g;
  const double pos = detail::positive_part(r);
  const double neg = detail::negative_part(r);
  return {pos * pos + weight * neg * neg, -2.0 * pos + 2.0 * weight * neg};
}

inline LossValue gamma_loss(double y, double g, GammaParam gamma) {
  return gamma_loss(y, g, gamma.gamma);
}

/// nu = P(Y >= g) + G * P(Y < g), given p_geq = P(Y >= g | A, X).
inline double nu_value(double p_geq, double weight) {
  if (!(p_geq >= 0.0 && p_geq <= 1.0)) {
    throw ParameterError("nu_value: probability must lie in [0,1], got " + std::to_string(p_geq));
  }
  if (!(weight > 0.0)) throw ParameterError("nu_value: weight must be positive");
  return p_geq + weight * (1.0 - p_geq);
}

inline double nu_value(double p_geq, GammaParam gamma) { return nu_value(p_geq, gamma.gamma); }

// ---------------------------------------------------------------------------
// Neyman-orthogonality diagnostic.

using ScoreFn = std::function<ScalarScore(const Observation&, const NuisanceEval&)>;
using NuisanceMap = std::function<NuisanceEval(const Observation&)>;

struct WeightedObservation {
  double prob;
  Observation obs;
};

/// Exact expectation of psi(W; theta, eta0 + r * direction) over a
/// finite-support distribution.
inline double expected_score(const ScoreFn& score, std::span<const WeightedObservation> dgp,
                             const NuisanceMap& eta0, const NuisanceMap& direction, double theta,
                             double r) {
  double total = 0.0;
  for (const auto& [p, obs] : dgp) {
    const NuisanceEval eta = eta0(obs) + r * direction(obs);
    const ScalarScore s = score(obs, eta);
    total += p * (s.psi_a(0, 0) * theta + s.psi_b(0));
  }
  if (!std::isfinite(total)) throw DgpError("expected score is not finite");
  return total;
}

/// Central finite difference of r -> E[psi(W; theta0, eta0 + r h)] at r = 0.
/// Orthogonal scores give 0 up to O(step^2).
inline double gateaux_orthogonality_check(const ScoreFn& score,
                                          std::span<const WeightedObservation> dgp,
                                          const NuisanceMap& eta0, const NuisanceMap& direction,
                                          double theta0, double step = 1e-5) {
  const double up = expected_score(score, dgp, eta0, direction, theta0, step);
  const double down = expected_score(score, dgp, eta0, direction, theta0, -step);
  return (up - down) / (2.0 * step);
}

}  // namespace avdml
