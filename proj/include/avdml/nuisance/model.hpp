#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "avdml/errors.hpp"
#include "avdml/scores.hpp"

namespace avdml::nuisance {

enum class LearnerKind { ridge, logistic, gbt };

/// Learner hyperparameters. The spec plus the training data fully determine a fit.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::gbt;
  double lambda = 1e-3;        // ridge / logistic penalty
  int rounds = 200;            // boosting rounds
  int depth = 2;               // tree depth
  double learning_rate = 0.1;
  int min_leaf = 20;
  double reg_lambda = 1.0;     // L2 on leaf values
  std::uint64_t seed = 0;
  double clip_eps = 0.01;      // probability outputs live in [eps, 1 - eps]

  static LearnerSpec ridge(double lambda = 1e-3) {
    LearnerSpec s;
    s.kind = LearnerKind::ridge;
    s.lambda = lambda;
    return s;
  }
  static LearnerSpec logistic(double lambda = 1e-4) {
    LearnerSpec s;
    s.kind = LearnerKind::logistic;
    s.lambda = lambda;
    return s;
  }
  static LearnerSpec gbt() { return LearnerSpec{}; }

  void validate() const {
    if (!(lambda >= 0.0)) throw ParameterError("learner penalty must be >= 0");
    if (kind == LearnerKind::gbt) {
      if (rounds < 0) throw ParameterError("boosting rounds must be >= 0");
      if (depth < 1) throw ParameterError("tree depth must be >= 1");
      if (!(learning_rate >= 0.0)) throw ParameterError("learning rate must be >= 0");
      if (min_leaf < 1) throw ParameterError("min leaf size must be >= 1");
      if (!(reg_lambda >= 0.0)) throw ParameterError("leaf regularization must be >= 0");
    }
    if (!(clip_eps >= 0.0 && clip_eps < 0.5)) throw ParameterError("clip eps must lie in [0, 0.5)");
  }
};

/// Rows of covariates with one target column. `ids` are the stream indices of
/// the rows and end up in the fitted model's training set.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::size_t> ids;

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
};

struct LinearModel {
  double intercept = 0.0;
  Eigen::VectorXd coef;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const TreeNode& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct TreeEnsemble {
  double base = 0.0;
  std::vector<Tree> trees;  // leaf values already scaled by the learning rate
};

enum class Link { identity, logit };

/// A fitted nuisance function x -> real.
///
/// Output pipeline: raw model score, then the inverse link, then an optional
/// clip range, then an optional nu transform p -> p + w (1 - p) clamped to
/// [min(1,w), max(1,w)].
class FittedNuisance {
 public:
  using Model = std::variant<LinearModel, TreeEnsemble>;

  FittedNuisance() = default;
  FittedNuisance(Model model, Link link) : model_(std::move(model)), link_(link) {}

  void set_clip(double lo, double hi) { clip_ = std::make_pair(lo, hi); }
  void set_nu_weight(double w) { nu_weight_ = w; }
  void set_training_ids(std::vector<std::size_t> ids) { training_ids_ = std::move(ids); }
  void set_loss_path(std::vector<double> path) { loss_path_ = std::move(path); }

  const Model& model() const { return model_; }
  Link link() const { return link_; }
  const std::optional<std::pair<double, double>>& clip() const { return clip_; }
  const std::optional<double>& nu_weight() const { return nu_weight_; }
  const std::vector<std::size_t>& training_ids() const { return training_ids_; }
  // Training loss after initialization and after each boosting round.
  const std::vector<double>& loss_path() const { return loss_path_; }

  bool trained_on(std::size_t id) const {
    return std::binary_search(training_ids_.begin(), training_ids_.end(), id);
  }

  /// Constant term of a boosted model (its loss-minimizing initialization).
  double initial_value() const {
    if (const auto* t = std::get_if<TreeEnsemble>(&model_)) return t->base;
    return std::get<LinearModel>(model_).intercept;
  }

  double raw(std::span<const double> x) const {
    if (const auto* lin = std::get_if<LinearModel>(&model_)) {
      double s = lin->intercept;
      for (Eigen::Index j = 0; j < lin->coef.size(); ++j) {
        s += lin->coef(j) * x[static_cast<std::size_t>(j)];
      }
      return s;
    }
    const auto& ens = std::get<TreeEnsemble>(model_);
    double s = ens.base;
    for (const Tree& t : ens.trees) s += t.predict(x);
    return s;
  }

  /// True when the clip range changed this prediction.
  bool clipped(std::span<const double> x) const {
    if (!clip_) return false;
    double v = raw(x);
    if (link_ == Link::logit) v = 1.0 / (1.0 + std::exp(-v));
    return v < clip_->first || v > clip_->second;
  }

  double predict(std::span<const double> x) const {
    double v = raw(x);
    if (link_ == Link::logit) v = 1.0 / (1.0 + std::exp(-v));
    if (clip_) v = std::clamp(v, clip_->first, clip_->second);
    if (nu_weight_) {
      const double w = *nu_weight_;
      v = std::clamp(v + w * (1.0 - v), std::min(1.0, w), std::max(1.0, w));
    }
    return v;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::VectorXd out(x.rows());
    std::vector<double> row(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) row[static_cast<std::size_t>(j)] = x(i, j);
      out(i) = predict(row);
    }
    return out;
  }

  void save(std::ostream& os) const;
  static FittedNuisance load(std::istream& is);

 private:
  Model model_ = LinearModel{};
  Link link_ = Link::identity;
  std::optional<std::pair<double, double>> clip_;
  std::optional<double> nu_weight_;
  std::vector<std::size_t> training_ids_;
  std::vector<double> loss_path_;
};

// ---------------------------------------------------------------------------
// Text format, version 1. One record per line, whitespace separated, doubles
// as C99 hex floats so a load reproduces predictions bit for bit:
//
//   avdml-nuisance 1
//   link identity|logit
//   clip none | clip <lo> <hi>
//   nu none | nu <w>
//   model linear
//   intercept <v>
//   coef <d> <c_1> ... <c_d>
//   end
//
// or, for boosted trees,
//
//   model trees
//   base <v>
//   trees <count>
//   tree <node_count>
//   <feature> <threshold> <left> <right> <value>     (node_count lines)
//   ...
//   end
//
// Training ids and loss paths are bookkeeping and are not written.

namespace detail {

inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw FitError("model file: bad number '" + tok + "'");
  return v;
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::vector<std::string> next() {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      std::istringstream ss(line);
      std::vector<std::string> toks;
      for (std::string t; ss >> t;) toks.push_back(t);
      if (!toks.empty()) return toks;
    }
    throw FitError("model file: unexpected end of input after line " + std::to_string(line_no_));
  }

  std::vector<std::string> expect(const std::string& key, std::size_t min_tokens) {
    auto toks = next();
    if (toks[0] != key || toks.size() < min_tokens) {
      throw FitError("model file line " + std::to_string(line_no_) + ": expected '" + key + "'");
    }
    return toks;
  }

 private:
  std::istream& is_;
  int line_no_ = 0;
};

}  // namespace detail

inline void FittedNuisance::save(std::ostream& os) const {
  os << "avdml-nuisance 1\n";
  os << "link " << (link_ == Link::logit ? "logit" : "identity") << "\n";
  if (clip_) {
    os << "clip " << detail::hex(clip_->first) << " " << detail::hex(clip_->second) << "\n";
  } else {
    os << "clip none\n";
  }
  if (nu_weight_) {
    os << "nu " << detail::hex(*nu_weight_) << "\n";
  } else {
    os << "nu none\n";
  }
  if (const auto* lin = std::get_if<LinearModel>(&model_)) {
    os << "model linear\n";
    os << "intercept " << detail::hex(lin->intercept) << "\n";
    os << "coef " << lin->coef.size();
    for (Eigen::Index j = 0; j < lin->coef.size(); ++j) os << " " << detail::hex(lin->coef(j));
    os << "\n";
  } else {
    const auto& ens = std::get<TreeEnsemble>(model_);
    os << "model trees\n";
    os << "base " << detail::hex(ens.base) << "\n";
    os << "trees " << ens.trees.size() << "\n";
    for (const Tree& t : ens.trees) {
      os << "tree " << t.nodes.size() << "\n";
      for (const TreeNode& n : t.nodes) {
        os << n.feature << " " << detail::hex(n.threshold) << " " << n.left << " " << n.right
           << " " << detail::hex(n.value) << "\n";
      }
    }
  }
  os << "end\n";
}

inline FittedNuisance FittedNuisance::load(std::istream& is) {
  detail::LineReader in(is);
  auto header = in.expect("avdml-nuisance", 2);
  if (header[1] != "1") throw FitError("model file: unsupported version " + header[1]);

  FittedNuisance out;
  const auto link = in.expect("link", 2);
  if (link[1] == "logit") {
    out.link_ = Link::logit;
  } else if (link[1] == "identity") {
    out.link_ = Link::identity;
  } else {
    throw FitError("model file: unknown link " + link[1]);
  }
  const auto clip = in.expect("clip", 2);
  if (clip[1] != "none") {
    if (clip.size() < 3) throw FitError("model file: clip needs two bounds");
    out.set_clip(detail::parse_double(clip[1]), detail::parse_double(clip[2]));
  }
  const auto nu = in.expect("nu", 2);
  if (nu[1] != "none") out.set_nu_weight(detail::parse_double(nu[1]));

  const auto model = in.expect("model", 2);
  if (model[1] == "linear") {
    LinearModel lin;
    lin.intercept = detail::parse_double(in.expect("intercept", 2)[1]);
    const auto coef = in.expect("coef", 2);
    const auto d = static_cast<std::size_t>(std::stoul(coef[1]));
    if (coef.size() != d + 2) throw FitError("model file: coefficient count mismatch");
    lin.coef.resize(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) {
      lin.coef(static_cast<Eigen::Index>(j)) = detail::parse_double(coef[j + 2]);
    }
    out.model_ = std::move(lin);
  } else if (model[1] == "trees") {
    TreeEnsemble ens;
    ens.base = detail::parse_double(in.expect("base", 2)[1]);
    const auto count = std::stoul(in.expect("trees", 2)[1]);
    for (std::size_t t = 0; t < count; ++t) {
      const auto nodes = std::stoul(in.expect("tree", 2)[1]);
      Tree tree;
      for (std::size_t k = 0; k < nodes; ++k) {
        const auto f = in.next();
        if (f.size() != 5) throw FitError("model file: tree node needs 5 fields");
        TreeNode n;
        n.feature = std::stoi(f[0]);
        n.threshold = detail::parse_double(f[1]);
        n.left = std::stoi(f[2]);
        n.right = std::stoi(f[3]);
        n.value = detail::parse_double(f[4]);
        // Children must come after their parent, which also rules out cycles.
        const auto self = static_cast<int>(k);
        const auto limit = static_cast<int>(nodes);
        if (n.feature >= 0 &&
            (n.left <= self || n.left >= limit || n.right <= self || n.right >= limit)) {
          throw FitError("model file: tree child index out of range");
        }
        tree.nodes.push_back(n);
      }
      if (tree.nodes.empty()) throw FitError("model file: empty tree");
      ens.trees.push_back(std::move(tree));
    }
    out.model_ = std::move(ens);
  } else {
    throw FitError("model file: unknown model kind " + model[1]);
  }
  in.expect("end", 1);
  return out;
}

}  // namespace avdml::nuisance
