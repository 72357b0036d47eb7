#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "avdml/detail/rng.hpp"
#include "avdml/detail/summation.hpp"
#include "avdml/errors.hpp"
#include "avdml/scores.hpp"

namespace avdml {

/// Smallest singular value of a pooled Jacobian below which a solve aborts.
inline constexpr double kSingularJacobianTolerance = 1e-10;

enum class FoldRule { round_robin, seeded_random };
enum class Aggregation { dml1, dml2 };

/// Round-robin fold of the index-th arrival.
inline int assign_fold(std::uint64_t index, int k_folds) {
  if (k_folds < 2) {
    throw ParameterError("cross-fitting needs at least 2 folds, got " + std::to_string(k_folds));
  }
  return static_cast<int>(index % static_cast<std::uint64_t>(k_folds));
}

struct FoldPlan {
  int k_folds = 5;
  FoldRule rule = FoldRule::round_robin;
  std::uint64_t seed = 0;
  std::vector<int> assignments;

  FoldPlan() = default;
  explicit FoldPlan(int k, FoldRule r = FoldRule::round_robin, std::uint64_t s = 0)
      : k_folds(k), rule(r), seed(s) {
    if (k < 2) throw ParameterError("cross-fitting needs at least 2 folds, got " + std::to_string(k));
  }

  /// Plan with n arrivals already assigned.
  static FoldPlan build(std::size_t n, int k, FoldRule r = FoldRule::round_robin,
                        std::uint64_t s = 0) {
    FoldPlan plan(k, r, s);
    plan.assignments.reserve(n);
    for (std::size_t i = 0; i < n; ++i) plan.append();
    return plan;
  }

  /// Plan with explicit fold labels (fixtures, externally assigned folds).
  static FoldPlan from_assignments(int k, std::vector<int> labels) {
    FoldPlan plan(k);
    for (int f : labels) {
      if (f < 0 || f >= k) throw ParameterError("fold label out of range: " + std::to_string(f));
    }
    plan.assignments = std::move(labels);
    return plan;
  }

  int fold_for(std::uint64_t index) const {
    if (rule == FoldRule::round_robin) return assign_fold(index, k_folds);
    return static_cast<int>(detail::derive_seed(seed, index) % static_cast<std::uint64_t>(k_folds));
  }

  int append() {
    const int f = fold_for(assignments.size());
    assignments.push_back(f);
    return f;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k_folds), 0);
    for (int f : assignments) ++sizes[static_cast<std::size_t>(f)];
    return sizes;
  }
};

template <int Dim>
struct FoldSummary {
  Eigen::Matrix<double, Dim, 1> theta;
  Eigen::Matrix<double, Dim, Dim> sigma_sq;
  std::size_t count = 0;
};

template <int Dim = 1>
struct DmlFit {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;

  Vector theta_hat;
  Matrix j_hat;                 // pooled mean of psi_a
  Matrix sigma_sq_hat;          // sandwich variance, PSD
  Matrix score_second_moment;   // pooled mean of psi psi^T at theta_hat
  std::size_t n = 0;
  std::vector<FoldSummary<Dim>> per_fold;
  double psd_clamp = 0.0;       // magnitude removed by the PSD projection
};

template <int Dim = 1>
struct VarianceEstimate {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  Matrix sigma_sq;        // after PSD projection
  Matrix unprojected;     // symmetrized, before projection
  Matrix second_moment;   // fold-averaged mean of psi psi^T
  std::vector<Matrix> per_fold;
  double clamp = 0.0;
};

namespace detail {

template <int Dim>
struct FoldMoments {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;
  std::vector<Matrix> mean_a;
  std::vector<Vector> mean_b;
  std::vector<std::size_t> count;
};

template <int Dim>
void check_plan(std::span<const LinearScore<Dim>> scores, const FoldPlan& plan) {
  if (plan.k_folds < 2) throw ParameterError("cross-fitting needs at least 2 folds");
  if (plan.assignments.size() != scores.size()) {
    throw ParameterError("fold plan covers " + std::to_string(plan.assignments.size()) +
                         " observations but " + std::to_string(scores.size()) +
                         " scores were given");
  }
}

template <int Dim>
FoldMoments<Dim> fold_moments(std::span<const LinearScore<Dim>> scores, const FoldPlan& plan) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;
  check_plan(scores, plan);
  const auto k = static_cast<std::size_t>(plan.k_folds);
  std::vector<CompensatedSum<Matrix>> sum_a(k, CompensatedSum<Matrix>(Matrix::Zero()));
  std::vector<CompensatedSum<Vector>> sum_b(k, CompensatedSum<Vector>(Vector::Zero()));
  FoldMoments<Dim> out;
  out.count.assign(k, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto f = static_cast<std::size_t>(plan.assignments[i]);
    sum_a[f].add(scores[i].psi_a);
    sum_b[f].add(scores[i].psi_b);
    ++out.count[f];
  }
  for (std::size_t f = 0; f < k; ++f) {
    if (out.count[f] == 0) {
      throw ParameterError("fold " + std::to_string(f) + " is empty");
    }
    const double c = static_cast<double>(out.count[f]);
    out.mean_a.push_back(sum_a[f].value() / c);
    out.mean_b.push_back(sum_b[f].value() / c);
  }
  return out;
}

template <int Dim>
double smallest_singular_value(const Eigen::Matrix<double, Dim, Dim>& m) {
  Eigen::JacobiSVD<Eigen::Matrix<double, Dim, Dim>> svd(m);
  return svd.singularValues().minCoeff();
}

template <int Dim>
Eigen::Matrix<double, Dim, 1> solve_linear(const Eigen::Matrix<double, Dim, Dim>& j,
                                           const Eigen::Matrix<double, Dim, 1>& b,
                                           const std::string& context) {
  const double smin = smallest_singular_value<Dim>(j);
  if (!(smin > kSingularJacobianTolerance)) {
    throw IdentificationError(context + ": Jacobian is singular (smallest singular value " +
                                  std::to_string(smin) + ")",
                              smin);
  }
  return -j.fullPivLu().solve(b);
}

// Symmetrize and clamp negative eigenvalues at zero.
template <int Dim>
Eigen::Matrix<double, Dim, Dim> project_psd(const Eigen::Matrix<double, Dim, Dim>& m,
                                            double& clamp) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  auto values = eig.eigenvalues().eval();
  clamp = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < 0.0) {
      clamp = std::max(clamp, -values(i));
      values(i) = 0.0;
    }
  }
  if (clamp == 0.0) return sym;
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

/// Sandwich variance J^-1 (mean psi psi^T at theta_hat) J^-T. DML2 averages the
/// second moment over folds with the (1/K) sum_k (1/|I_k|) weights; DML1
/// forms one sandwich per fold and averages those.
template <int Dim>
VarianceEstimate<Dim> estimate_variance(std::span<const LinearScore<Dim>> scores,
                                        const Eigen::Matrix<double, Dim, 1>& theta_hat,
                                        const Eigen::Matrix<double, Dim, Dim>& j_hat,
                                        const FoldPlan& plan, Aggregation variant) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  detail::check_plan(scores, plan);
  const double smin = detail::smallest_singular_value<Dim>(j_hat);
  if (!(smin > kSingularJacobianTolerance)) {
    throw IdentificationError("estimate_variance: Jacobian is singular (smallest singular value " +
                                  std::to_string(smin) + ")",
                              smin);
  }
  const Matrix j_inv = j_hat.inverse();
  const auto k = static_cast<std::size_t>(plan.k_folds);
  std::vector<detail::CompensatedSum<Matrix>> sums(k,
                                                   detail::CompensatedSum<Matrix>(Matrix::Zero()));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto f = static_cast<std::size_t>(plan.assignments[i]);
    const auto psi = scores[i].at(theta_hat);
    sums[f].add(psi * psi.transpose());
    ++counts[f];
  }

  VarianceEstimate<Dim> out;
  detail::CompensatedSum<Matrix> pooled(Matrix::Zero());
  detail::CompensatedSum<Matrix> fold_sandwiches(Matrix::Zero());
  for (std::size_t f = 0; f < k; ++f) {
    if (counts[f] == 0) throw ParameterError("fold " + std::to_string(f) + " is empty");
    const Matrix m = sums[f].value() / static_cast<double>(counts[f]);
    pooled.add(m);
    const Matrix s = j_inv * m * j_inv.transpose();
    out.per_fold.push_back(s);
    fold_sandwiches.add(s);
  }
  out.second_moment = pooled.value() / static_cast<double>(k);
  const Matrix raw = variant == Aggregation::dml2
                         ? Matrix(j_inv * out.second_moment * j_inv.transpose())
                         : Matrix(fold_sandwiches.value() / static_cast<double>(k));
  out.unprojected = 0.5 * (raw + raw.transpose());
  out.sigma_sq = detail::project_psd<Dim>(out.unprojected, out.clamp);
  return out;
}

/// DML2: solve the pooled moment equation (1/K) sum_k mean_{I_k} psi = 0.
template <int Dim>
DmlFit<Dim> solve_dml2(std::span<const LinearScore<Dim>> scores, const FoldPlan& plan) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;
  const auto moments = detail::fold_moments<Dim>(scores, plan);
  const double k = static_cast<double>(plan.k_folds);
  detail::CompensatedSum<Matrix> ja(Matrix::Zero());
  detail::CompensatedSum<Vector> jb(Vector::Zero());
  for (std::size_t f = 0; f < moments.count.size(); ++f) {
    ja.add(moments.mean_a[f]);
    jb.add(moments.mean_b[f]);
  }
  DmlFit<Dim> fit;
  fit.j_hat = ja.value() / k;
  fit.theta_hat = detail::solve_linear<Dim>(fit.j_hat, Vector(jb.value() / k), "solve_dml2");
  fit.n = scores.size();

  auto var = estimate_variance<Dim>(scores, fit.theta_hat, fit.j_hat, plan, Aggregation::dml2);
  fit.sigma_sq_hat = var.sigma_sq;
  fit.score_second_moment = var.second_moment;
  fit.psd_clamp = var.clamp;
  for (std::size_t f = 0; f < moments.count.size(); ++f) {
    // Fold-level estimates are informational; a singular fold does not block DML2.
    Vector theta_f = Vector::Constant(std::numeric_limits<double>::quiet_NaN());
    if (detail::smallest_singular_value<Dim>(moments.mean_a[f]) > kSingularJacobianTolerance) {
      theta_f = -moments.mean_a[f].fullPivLu().solve(moments.mean_b[f]);
    }
    fit.per_fold.push_back({theta_f, var.per_fold[f], moments.count[f]});
  }
  return fit;
}

/// DML1: solve each fold's moment equation and average the K solutions.
template <int Dim>
DmlFit<Dim> solve_dml1(std::span<const LinearScore<Dim>> scores, const FoldPlan& plan) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  using Vector = Eigen::Matrix<double, Dim, 1>;
  const auto moments = detail::fold_moments<Dim>(scores, plan);
  const double k = static_cast<double>(plan.k_folds);
  detail::CompensatedSum<Vector> theta_sum(Vector::Zero());
  detail::CompensatedSum<Matrix> ja(Matrix::Zero());
  std::vector<Vector> thetas;
  for (std::size_t f = 0; f < moments.count.size(); ++f) {
    thetas.push_back(detail::solve_linear<Dim>(moments.mean_a[f], moments.mean_b[f],
                                               "solve_dml1 fold " + std::to_string(f)));
    theta_sum.add(thetas.back());
    ja.add(moments.mean_a[f]);
  }
  DmlFit<Dim> fit;
  fit.theta_hat = theta_sum.value() / k;
  fit.j_hat = ja.value() / k;
  fit.n = scores.size();
  auto var = estimate_variance<Dim>(scores, fit.theta_hat, fit.j_hat, plan, Aggregation::dml1);
  fit.sigma_sq_hat = var.sigma_sq;
  fit.score_second_moment = var.second_moment;
  fit.psd_clamp = var.clamp;
  for (std::size_t f = 0; f < thetas.size(); ++f) {
    fit.per_fold.push_back({thetas[f], var.per_fold[f], moments.count[f]});
  }
  return fit;
}

template <int Dim>
DmlFit<Dim> solve_dml(std::span<const LinearScore<Dim>> scores, const FoldPlan& plan,
                      Aggregation variant) {
  return variant == Aggregation::dml2 ? solve_dml2<Dim>(scores, plan)
                                      : solve_dml1<Dim>(scores, plan);
}

struct IdentificationReport {
  double jacobian_min_singular = 0.0;
  double jacobian_max_singular = 0.0;
  double score_min_eigenvalue = 0.0;
  bool jacobian_ok = false;      // singular values inside [c0, c1]
  bool nondegenerate_ok = false; // score second moment eigenvalues >= c0
  bool pass() const { return jacobian_ok && nondegenerate_ok; }
};

/// Checks the fitted Jacobian's singular values against [c0, c1] and the score
/// second-moment matrix's eigenvalues against c0.
template <int Dim>
IdentificationReport identification_diagnostics(const DmlFit<Dim>& fit, double c0, double c1) {
  using Matrix = Eigen::Matrix<double, Dim, Dim>;
  if (!(c0 > 0.0) || !(c1 >= c0)) throw ParameterError("need 0 < c0 <= c1");
  IdentificationReport r;
  Eigen::JacobiSVD<Matrix> svd(fit.j_hat);
  r.jacobian_min_singular = svd.singularValues().minCoeff();
  r.jacobian_max_singular = svd.singularValues().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(
      Matrix(0.5 * (fit.score_second_moment + fit.score_second_moment.transpose())));
  r.score_min_eigenvalue = eig.eigenvalues().minCoeff();
  r.jacobian_ok = r.jacobian_min_singular >= c0 && r.jacobian_max_singular <= c1;
  r.nondegenerate_ok = r.score_min_eigenvalue >= c0;
  return r;
}

}  // namespace avdml
