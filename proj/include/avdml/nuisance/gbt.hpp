#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "avdml/nuisance/model.hpp"
#include "avdml/scores.hpp"

namespace avdml::nuisance {

/// A convex per-row loss L(y, f) with first and second derivatives in f.
template <class L>
concept BoostingLoss = requires(const L& loss, double y, double f) {
  { loss.value(y, f) } -> std::convertible_to<double>;
  { loss.gradient(y, f) } -> std::convertible_to<double>;
  { loss.hessian(y, f) } -> std::convertible_to<double>;
};

struct SquaredLoss {
  double value(double y, double f) const { return (y - f) * (y - f); }
  double gradient(double y, double f) const { return -2.0 * (y - f); }
  double hessian(double, double) const { return 2.0; }
};

/// (y-f)_+^2 + w (y-f)_-^2. Continuously differentiable; the curvature jumps
/// from 2 to 2w at y = f.
struct GammaLoss {
  double weight = 1.0;

  double value(double y, double f) const { return gamma_loss(y, f, weight).value; }
  double gradient(double y, double f) const { return gamma_loss(y, f, weight).d_dg; }
  double hessian(double y, double f) const {
    if (y > f) return 2.0;
    if (y < f) return 2.0 * weight;
    return 1.0 + weight;
  }
};

/// Minimizer over constants c of sum_i L(y_i, c), by bisection on the summed
/// derivative. The bracket [min y, max y] holds the minimizer for any loss
/// whose derivative changes sign at f = y.
template <BoostingLoss Loss>
double constant_minimizer(const Loss& loss, const Eigen::VectorXd& y) {
  if (y.size() == 0) throw FitError("constant_minimizer: empty data");
  double lo = y.minCoeff();
  double hi = y.maxCoeff();
  auto slope = [&](double c) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) s += loss.gradient(y(i), c);
    return s;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (slope(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace detail {

struct NodeStats {
  double g = 0.0;
  double h = 0.0;
  int count = 0;

  void add(double gi, double hi) {
    g += gi;
    h += hi;
    ++count;
  }
};

inline double leaf_score(const NodeStats& s, double reg) { return s.g * s.g / (s.h + reg); }

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

}  // namespace detail

/// Gradient boosting with depth-limited regression trees.
///
/// Each round fits a tree to the loss's gradient and curvature (second-order
/// gain, exact greedy splits) and adds leaf values
/// -learning_rate * G / (H + reg_lambda). Initialization is the
/// loss-minimizing constant. No row or column sampling, so fits are
/// deterministic.
template <BoostingLoss Loss>
FittedNuisance fit_gbt(const Dataset& data, const Loss& loss, const LearnerSpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (n == 0) throw FitError("fit_gbt: empty data");
  if (!data.y.allFinite() || !data.x.allFinite()) throw FitError("fit_gbt: non-finite data");

  TreeEnsemble ens;
  ens.base = constant_minimizer(loss, data.y);
  std::vector<double> pred(n, ens.base);

  auto total_loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += loss.value(data.y(static_cast<Eigen::Index>(i)), pred[i]);
    return s / static_cast<double>(n);
  };
  std::vector<double> loss_path{total_loss()};

  // Presorted row order per feature.
  std::vector<std::vector<std::size_t>> order(d);
  for (std::size_t f = 0; f < d; ++f) {
    order[f].resize(n);
    std::iota(order[f].begin(), order[f].end(), std::size_t{0});
    const auto col = static_cast<Eigen::Index>(f);
    std::stable_sort(order[f].begin(), order[f].end(), [&](std::size_t a, std::size_t b) {
      return data.x(static_cast<Eigen::Index>(a), col) < data.x(static_cast<Eigen::Index>(b), col);
    });
  }

  const int min_leaf = spec.min_leaf;
  const double reg = spec.reg_lambda;
  std::vector<double> grad(n), hess(n);
  std::vector<int> node_of(n);
  const int rounds = spec.learning_rate > 0.0 ? spec.rounds : 0;

  for (int round = 0; round < rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double yi = data.y(static_cast<Eigen::Index>(i));
      grad[i] = loss.gradient(yi, pred[i]);
      hess[i] = loss.hessian(yi, pred[i]);
      if (!std::isfinite(grad[i]) || !std::isfinite(hess[i])) {
        throw FitError("fit_gbt: non-finite gradient in round " + std::to_string(round));
      }
    }

    Tree tree;
    tree.nodes.emplace_back();
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<detail::NodeStats> stats(1);
    for (std::size_t i = 0; i < n; ++i) stats[0].add(grad[i], hess[i]);
    std::vector<int> frontier{0};

    for (int level = 0; level < spec.depth && !frontier.empty(); ++level) {
      const std::size_t node_count = tree.nodes.size();
      std::vector<char> active(node_count, 0);
      for (int nd : frontier) {
        if (stats[static_cast<std::size_t>(nd)].count >= 2 * min_leaf) active[static_cast<std::size_t>(nd)] = 1;
      }
      std::vector<detail::SplitCandidate> best(node_count);
      for (std::size_t f = 0; f < d; ++f) {
        const auto col = static_cast<Eigen::Index>(f);
        std::vector<detail::NodeStats> left(node_count);
        std::vector<double> last(node_count, -std::numeric_limits<double>::infinity());
        for (std::size_t i : order[f]) {
          const auto nd = static_cast<std::size_t>(node_of[i]);
          if (!active[nd]) continue;
          const double xi = data.x(static_cast<Eigen::Index>(i), col);
          detail::NodeStats& l = left[nd];
          const detail::NodeStats& tot = stats[nd];
          if (l.count >= min_leaf && tot.count - l.count >= min_leaf && xi > last[nd]) {
            const detail::NodeStats r{tot.g - l.g, tot.h - l.h, tot.count - l.count};
            const double gain =
                detail::leaf_score(l, reg) + detail::leaf_score(r, reg) - detail::leaf_score(tot, reg);
            if (gain > best[nd].gain + 1e-12) {
              double thr = 0.5 * (last[nd] + xi);
              if (!(thr < xi)) thr = last[nd];
              best[nd] = {gain, static_cast<int>(f), thr};
            }
          }
          l.add(grad[i], hess[i]);
          last[nd] = xi;
        }
      }

      std::vector<int> next;
      std::vector<int> split_left(node_count, -1);
      for (int nd : frontier) {
        const auto& b = best[static_cast<std::size_t>(nd)];
        if (b.feature < 0) continue;
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[static_cast<std::size_t>(nd)];
        node.feature = b.feature;
        node.threshold = b.threshold;
        node.left = l;
        node.right = l + 1;
        split_left[static_cast<std::size_t>(nd)] = l;
        next.push_back(l);
        next.push_back(l + 1);
      }
      if (next.empty()) break;
      stats.resize(tree.nodes.size());
      for (int c : next) stats[static_cast<std::size_t>(c)] = {};
      for (std::size_t i = 0; i < n; ++i) {
        const auto nd = static_cast<std::size_t>(node_of[i]);
        if (nd >= node_count || split_left[nd] < 0) continue;
        const auto& node = tree.nodes[nd];
        const double xi = data.x(static_cast<Eigen::Index>(i), node.feature);
        node_of[i] = xi <= node.threshold ? node.left : node.right;
        stats[static_cast<std::size_t>(node_of[i])].add(grad[i], hess[i]);
      }
      frontier = std::move(next);
    }

    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      auto& node = tree.nodes[k];
      if (node.feature >= 0) continue;
      const auto& s = stats[k];
      node.value = s.count > 0 ? -spec.learning_rate * s.g / (s.h + reg) : 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) pred[i] += tree.nodes[static_cast<std::size_t>(node_of[i])].value;
    ens.trees.push_back(std::move(tree));
    loss_path.push_back(total_loss());
    if (!std::isfinite(loss_path.back())) throw FitError("fit_gbt: non-finite training loss");
  }

  FittedNuisance out(std::move(ens), Link::identity);
  out.set_training_ids(data.ids);
  out.set_loss_path(std::move(loss_path));
  return out;
}

}  // namespace avdml::nuisance
