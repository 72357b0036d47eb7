#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "avdml/crossfit.hpp"

using namespace avdml;

namespace {

std::vector<ScalarScore> scores(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<ScalarScore> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(make_scalar_score(a[i], b[i]));
  return out;
}

// Two folds: {psi_a [-1,-2], psi_b [1,3]} and {psi_a [-1,-1], psi_b [2,4]}.
struct TwoFoldFixture {
  std::vector<ScalarScore> s = scores({-1, -2, -1, -1}, {1, 3, 2, 4});
  FoldPlan plan = FoldPlan::from_assignments(2, {0, 0, 1, 1});
};

}  // namespace

TEST(AssignFold, Modular) {
  EXPECT_EQ(assign_fold(0, 4), 0);
  EXPECT_EQ(assign_fold(5, 4), 1);
  EXPECT_THROW(assign_fold(3, 1), ParameterError);
}

TEST(FoldPlanTest, BalancedSizes) {
  auto sizes = FoldPlan::build(8, 4).fold_sizes();
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 2, 2}));
  sizes = FoldPlan::build(10, 4).fold_sizes();
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 2, 2}));
  sizes = FoldPlan::build(10, 5).fold_sizes();
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 2, 2, 2}));
}

TEST(FoldPlanTest, SeededRandomIsDeterministic) {
  const auto a = FoldPlan::build(500, 5, FoldRule::seeded_random, 9);
  const auto b = FoldPlan::build(500, 5, FoldRule::seeded_random, 9);
  const auto c = FoldPlan::build(500, 5, FoldRule::seeded_random, 10);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_NE(a.assignments, c.assignments);
  for (auto s : a.fold_sizes()) EXPECT_GT(s, 60u);
}

TEST(FoldPlanTest, RejectsSingleFold) { EXPECT_THROW(FoldPlan(1), ParameterError); }

TEST(SolveDml2, SampleMeanWhenJacobianIsMinusOne) {
  const auto s = scores({-1, -1, -1, -1}, {1, 3, 2, 2});
  const auto fit = solve_dml2<1>(s, FoldPlan::from_assignments(2, {0, 0, 1, 1}));
  EXPECT_EQ(fit.theta_hat(0), 2.0);
}

TEST(SolveDml2, HandSolvedFixture) {
  TwoFoldFixture f;
  const auto fit = solve_dml2<1>(f.s, f.plan);
  EXPECT_DOUBLE_EQ(fit.theta_hat(0), 2.0);
  EXPECT_DOUBLE_EQ(fit.j_hat(0, 0), -1.25);
  EXPECT_EQ(fit.n, 4u);
}

TEST(SolveDml2, ConstantScores) {
  const auto s = scores({-1, -1, -1, -1, -1}, {0.7, 0.7, 0.7, 0.7, 0.7});
  EXPECT_DOUBLE_EQ(solve_dml2<1>(s, FoldPlan::build(5, 2)).theta_hat(0), 0.7);
}

TEST(SolveDml2, SingularJacobianReportsSingularValue) {
  const auto s = scores({0, 0, 0, 0}, {1, 2, 3, 4});
  try {
    solve_dml2<1>(s, FoldPlan::build(4, 2));
    FAIL() << "expected IdentificationError";
  } catch (const IdentificationError& e) {
    EXPECT_EQ(e.smallest_singular_value(), 0.0);
  }
}

TEST(SolveDml1, HandSolvedFixture) {
  TwoFoldFixture f;
  const auto fit = solve_dml1<1>(f.s, f.plan);
  EXPECT_DOUBLE_EQ(fit.theta_hat(0), 13.0 / 6.0);
  ASSERT_EQ(fit.per_fold.size(), 2u);
  EXPECT_DOUBLE_EQ(fit.per_fold[0].theta(0), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(fit.per_fold[1].theta(0), 3.0);
}

TEST(SolveDml1, EqualsDml2OnHomogeneousFolds) {
  const auto s = scores({-1, -2, -1, -2, -1, -2}, {1, 3, 1, 3, 1, 3});
  const auto plan = FoldPlan::build(6, 3);
  EXPECT_DOUBLE_EQ(solve_dml1<1>(s, plan).theta_hat(0), solve_dml2<1>(s, plan).theta_hat(0));
}

TEST(SolveDml1, SingularFoldIsNamed) {
  const auto s = scores({-1, -1, 0, 0}, {1, 2, 3, 4});
  try {
    solve_dml1<1>(s, FoldPlan::from_assignments(2, {0, 0, 1, 1}));
    FAIL() << "expected IdentificationError";
  } catch (const IdentificationError& e) {
    EXPECT_NE(std::string(e.what()).find("fold 1"), std::string::npos);
  }
}

TEST(EstimateVariance, UnitSecondMoment) {
  const auto s = scores({-1, -1}, {1, -1});
  Eigen::Matrix<double, 1, 1> theta, j;
  theta << 0.0;
  j << -1.0;
  const auto v = estimate_variance<1>(s, theta, j, FoldPlan::from_assignments(2, {0, 1}), Aggregation::dml2);
  EXPECT_DOUBLE_EQ(v.sigma_sq(0, 0), 1.0);
}

TEST(EstimateVariance, ZeroScores) {
  const auto s = scores({-1, -1, -1}, {0, 0, 0});
  Eigen::Matrix<double, 1, 1> theta, j;
  theta << 0.0;
  j << -1.0;
  const auto v = estimate_variance<1>(s, theta, j, FoldPlan::build(3, 3), Aggregation::dml2);
  EXPECT_EQ(v.sigma_sq(0, 0), 0.0);
}

TEST(EstimateVariance, HandSandwich) {
  const auto s = scores({-2, -2}, {2, -2});
  Eigen::Matrix<double, 1, 1> theta, j;
  theta << 0.0;
  j << -2.0;
  const auto v = estimate_variance<1>(s, theta, j, FoldPlan::from_assignments(2, {0, 1}), Aggregation::dml2);
  EXPECT_DOUBLE_EQ(v.sigma_sq(0, 0), 1.0);
  const auto v1 = estimate_variance<1>(s, theta, j, FoldPlan::from_assignments(2, {0, 1}), Aggregation::dml1);
  EXPECT_DOUBLE_EQ(v1.sigma_sq(0, 0), 1.0);
}

TEST(EstimateVariance, SingularJacobian) {
  const auto s = scores({-1, -1}, {1, -1});
  Eigen::Matrix<double, 1, 1> theta, j;
  theta << 0.0;
  j << 0.0;
  EXPECT_THROW(estimate_variance<1>(s, theta, j, FoldPlan::build(2, 2), Aggregation::dml2),
               IdentificationError);
}

TEST(Crossfit, IdentityJacobianGivesGrandMean) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  std::vector<ScalarScore> s;
  double sum = 0.0;
  for (int i = 0; i < 40; ++i) {  // 40 rows, K = 4 -> equal folds
    const double b = n01(rng);
    sum += b;
    s.push_back(make_scalar_score(-1.0, b));
  }
  const auto plan = FoldPlan::build(40, 4);
  EXPECT_NEAR(solve_dml2<1>(s, plan).theta_hat(0), sum / 40.0, 1e-14);
  EXPECT_NEAR(solve_dml1<1>(s, plan).theta_hat(0), sum / 40.0, 1e-14);
}

TEST(Crossfit, PooledMomentResidualVanishes) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 50; ++t) {
    std::vector<ScalarScore> s;
    for (int i = 0; i < 103; ++i) s.push_back(make_scalar_score(-1.0 - std::abs(n01(rng)), 5.0 * n01(rng)));
    const auto plan = FoldPlan::build(s.size(), 5);
    const double theta = solve_dml2<1>(s, plan).theta_hat(0);
    std::vector<double> sum(5, 0.0);
    std::vector<int> cnt(5, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      sum[plan.assignments[i]] += s[i].psi_a(0, 0) * theta + s[i].psi_b(0);
      ++cnt[plan.assignments[i]];
    }
    double pooled = 0.0;
    for (int f = 0; f < 5; ++f) pooled += sum[f] / cnt[f] / 5.0;
    EXPECT_LE(std::abs(pooled), 1e-10);
  }
}

TEST(Crossfit, MultivariateVarianceSymmetricPsd) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01;
  std::vector<LinearScore<2>> s;
  for (int i = 0; i < 200; ++i) {
    LinearScore<2> sc;
    sc.psi_a << -1.0 - 0.1 * std::abs(n01(rng)), 0.2 * n01(rng), 0.2 * n01(rng), -2.0;
    sc.psi_b << n01(rng), n01(rng) + 0.5;
    s.push_back(sc);
  }
  const auto plan = FoldPlan::build(s.size(), 4);
  for (Aggregation agg : {Aggregation::dml1, Aggregation::dml2}) {
    const auto fit = solve_dml<2>(s, plan, agg);
    const Eigen::Matrix2d v = fit.sigma_sq_hat;
    EXPECT_LE((v - v.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const auto var = estimate_variance<2>(s, fit.theta_hat, fit.j_hat, plan, agg);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(var.unprojected);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Crossfit, PermutationWithinFoldsLeavesFitUnchanged) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n01;
  std::vector<ScalarScore> s;
  for (int i = 0; i < 90; ++i) s.push_back(make_scalar_score(-1.0 - std::abs(n01(rng)), n01(rng)));
  const auto plan = FoldPlan::build(s.size(), 3);
  const auto base = solve_dml2<1>(s, plan);
  // Permute within each fold: reverse the order of rows in fold 0 and shuffle fold 2.
  std::vector<std::size_t> idx0, idx2;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (plan.assignments[i] == 0) idx0.push_back(i);
    if (plan.assignments[i] == 2) idx2.push_back(i);
  }
  auto perm = s;
  for (std::size_t k = 0; k < idx0.size(); ++k) perm[idx0[k]] = s[idx0[idx0.size() - 1 - k]];
  auto shuffled = idx2;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (std::size_t k = 0; k < idx2.size(); ++k) perm[idx2[k]] = s[shuffled[k]];
  const auto other = solve_dml2<1>(perm, plan);
  EXPECT_NEAR(other.theta_hat(0), base.theta_hat(0), 1e-12);
  EXPECT_NEAR(other.sigma_sq_hat(0, 0), base.sigma_sq_hat(0, 0), 1e-12);
}

TEST(Crossfit, PlanSizeMismatchRejected) {
  const auto s = scores({-1, -1, -1}, {1, 2, 3});
  EXPECT_THROW(solve_dml2<1>(s, FoldPlan::build(4, 2)), ParameterError);
}

TEST(IdentificationDiagnostics, ScalarPass) {
  const auto s = scores({-1, -1, -1, -1}, {1, -1, 2, -2});
  const auto fit = solve_dml2<1>(s, FoldPlan::build(4, 2));
  const auto r = identification_diagnostics(fit, 0.1, 10.0);
  EXPECT_TRUE(r.pass());
  EXPECT_DOUBLE_EQ(r.jacobian_min_singular, 1.0);
}

TEST(IdentificationDiagnostics, ZeroJacobianFails) {
  DmlFit<1> fit;
  fit.j_hat << 0.0;
  fit.score_second_moment << 1.0;
  const auto r = identification_diagnostics(fit, 0.1, 10.0);
  EXPECT_FALSE(r.pass());
  EXPECT_EQ(r.jacobian_min_singular, 0.0);
}

TEST(IdentificationDiagnostics, SingularValueAboveUpperBoundFails) {
  DmlFit<2> fit;
  fit.j_hat << -1.0, 0.0, 0.0, -3.0;
  fit.score_second_moment = Eigen::Matrix2d::Identity();
  const auto r = identification_diagnostics(fit, 0.5, 2.0);
  EXPECT_FALSE(r.jacobian_ok);
  EXPECT_DOUBLE_EQ(r.jacobian_max_singular, 3.0);
  EXPECT_DOUBLE_EQ(r.jacobian_min_singular, 1.0);
}

TEST(IdentificationDiagnostics, DegenerateScoreFails) {
  const auto s = scores({-1, -1, -1, -1}, {0, 0, 0, 0});
  const auto r = identification_diagnostics(solve_dml2<1>(s, FoldPlan::build(4, 2)), 0.1, 10.0);
  EXPECT_TRUE(r.jacobian_ok);
  EXPECT_FALSE(r.nondegenerate_ok);
}
