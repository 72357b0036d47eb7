#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "avdml/boundary.hpp"
#include "avdml/crossfit.hpp"
#include "avdml/errors.hpp"
#include "avdml/nuisance.hpp"
#include "avdml/scores.hpp"
#include "json.hpp"

namespace avdml {

enum class Estimand { ate, late, pate_lower, pate_upper, plr };

inline std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::ate: return "ate";
    case Estimand::late: return "late";
    case Estimand::pate_lower: return "pate_lower";
    case Estimand::pate_upper: return "pate_upper";
    case Estimand::plr: return "plr";
  }
  return "?";
}

inline std::optional<Estimand> parse_estimand(const std::string& s) {
  for (Estimand e : {Estimand::ate, Estimand::late, Estimand::pate_lower, Estimand::pate_upper,
                     Estimand::plr}) {
    if (to_string(e) == s) return e;
  }
  return std::nullopt;
}

inline bool needs_instrument(Estimand e) { return e == Estimand::late; }

/// Score of the estimand as a function of one observation and its nuisances.
inline ScoreFn score_function(Estimand e, double gamma = 1.0) {
  switch (e) {
    case Estimand::ate: return aipw_score;
    case Estimand::plr: return plr_score;
    case Estimand::late: return late_score;
    case Estimand::pate_lower:
    case Estimand::pate_upper: {
      const GammaParam g(gamma);
      const BoundSide side = e == Estimand::pate_lower ? BoundSide::lower : BoundSide::upper;
      return [g, side](const Observation& o, const NuisanceEval& v) { return pate_score(o, v, g, side); };
    }
  }
  throw ParameterError("unknown estimand");
}

/// NuisanceEval fields the estimand's score reads.
inline std::vector<std::string> score_coordinates(Estimand e) {
  switch (e) {
    case Estimand::ate: return {"g1", "g0", "e"};
    case Estimand::plr: return {"m", "e"};
    case Estimand::late: return {"g_t", "g_c", "m_t", "m_c", "e"};
    case Estimand::pate_lower:
    case Estimand::pate_upper: return {"g1", "g0", "nu", "nu0", "e"};
  }
  return {};
}

/// Unit shift in one named NuisanceEval coordinate.
inline NuisanceEval unit_direction(const std::string& field) {
  NuisanceEval d = NuisanceEval::zero();
  if (field == "g1") d.g1 = 1.0;
  else if (field == "g0") d.g0 = 1.0;
  else if (field == "e") d.e = 1.0;
  else if (field == "g_t") d.g_t = 1.0;
  else if (field == "g_c") d.g_c = 1.0;
  else if (field == "m_t") d.m_t = 1.0;
  else if (field == "m_c") d.m_c = 1.0;
  else if (field == "m") d.m = 1.0;
  else if (field == "nu") d.nu = 1.0;
  else if (field == "nu0") d.nu0 = 1.0;
  else throw ParameterError("unknown nuisance coordinate " + field);
  return d;
}

struct StopRule {
  enum class Kind { excludes_zero, width_below, sign_determined };
  Kind kind = Kind::excludes_zero;
  double width = 0.0;

  static StopRule excludes_zero() { return {Kind::excludes_zero, 0.0}; }
  static StopRule width_below(double w) { return {Kind::width_below, w}; }
  static StopRule sign_determined() { return {Kind::sign_determined, 0.0}; }
};

struct StopDecision {
  bool stop = false;
  std::string reason;
};

/// One reported confidence-sequence point.
struct CsPoint {
  std::int64_t n = 0;
  double theta_hat = 0.0;
  double sigma_hat = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double lower_int = 0.0;  // running intersection since the first peek
  double upper_int = 0.0;
  bool stopped = false;
  bool empty_int = false;

  Interval raw() const { return {lower, upper, false}; }
  Interval intersected() const { return {lower_int, upper_int, empty_int}; }
};

/// Stop rules read the running intersection.
///   excludes_zero    0 is not in [lower_int, upper_int]
///   width_below(w)   upper_int - lower_int < w
///   sign_determined  the interval has positive width and sits in [0, inf) or (-inf, 0]
/// A crossed (empty) intersection stops under every rule.
inline StopDecision check_stop(const CsPoint& p, const StopRule& rule) {
  if (p.empty_int) return {true, "running intersection is empty"};
  switch (rule.kind) {
    case StopRule::Kind::excludes_zero:
      if (p.lower_int > 0.0) return {true, "interval above zero"};
      if (p.upper_int < 0.0) return {true, "interval below zero"};
      return {false, "interval contains zero"};
    case StopRule::Kind::width_below:
      if (p.upper_int - p.lower_int < rule.width) return {true, "width below threshold"};
      return {false, "width above threshold"};
    case StopRule::Kind::sign_determined:
      if (p.upper_int > p.lower_int && (p.lower_int >= 0.0 || p.upper_int <= 0.0)) {
        return {true, p.lower_int >= 0.0 ? "sign nonnegative" : "sign nonpositive"};
      }
      return {false, "sign undetermined"};
  }
  return {false, ""};
}

/// NDJSON record with the fixed field order
/// n, estimate, sigma, lower, upper, lower_int, upper_int, stopped.
inline nlohmann::ordered_json to_json(const CsPoint& p) {
  nlohmann::ordered_json j;
  j["n"] = p.n;
  j["estimate"] = p.theta_hat;
  j["sigma"] = p.sigma_hat;
  j["lower"] = p.lower;
  j["upper"] = p.upper;
  j["lower_int"] = p.lower_int;
  j["upper_int"] = p.upper_int;
  j["stopped"] = p.stopped;
  return j;
}

inline void write_ndjson(std::ostream& os, const CsPoint& p) { os << to_json(p).dump() << "\n"; }

struct StreamConfig {
  Estimand estimand = Estimand::ate;
  double alpha = 0.05;
  int k_folds = 5;
  std::int64_t burn_in = 250;       // first peeking time m
  std::optional<double> rho;        // unset: tune at the first peek, then freeze
  double gamma = 1.0;               // sensitivity parameter for pate_*
  double epsilon = 0.01;            // propensity clip
  double refit_factor = 2.0;        // refit at burn_in * factor^j
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::dml2;
  FoldRule fold_rule = FoldRule::round_robin;
  BoundaryForm boundary = BoundaryForm::robbins_mixture;
  nuisance::LearnerSpec regression = nuisance::LearnerSpec::gbt();
  nuisance::LearnerSpec classifier = nuisance::LearnerSpec::logistic();
  std::optional<StopRule> stop_rule;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0,1)");
    if (k_folds < 2) throw ParameterError("k_folds must be >= 2");
    if (burn_in < k_folds) throw ParameterError("burn_in must be >= k_folds");
    if (rho && !(*rho > 0.0)) throw ParameterError("fixed rho must be positive");
    if (!(gamma >= 1.0)) throw ParameterError("gamma must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ParameterError("epsilon must lie in (0, 0.5)");
    if (!(refit_factor >= 1.0)) throw ParameterError("refit_factor must be >= 1");
    regression.validate();
    classifier.validate();
  }
};

/// Nuisance roles a stream may fit. Which ones depends on the estimand.
enum class Role { g1, g0, e, g_t, g_c, m_t, m_c, m, nu1, nu0 };
inline constexpr std::size_t kRoleCount = 10;

inline const char* role_name(Role r) {
  static constexpr std::array<const char*, kRoleCount> names{"g1", "g0",  "e", "g_t", "g_c",
                                                             "m_t", "m_c", "m", "nu1", "nu0"};
  return names[static_cast<std::size_t>(r)];
}

struct RefitRecord {
  std::int64_t n = 0;
  // Pooled held-out error per role: RMSE for regression and propensity roles,
  // root mean Gamma-loss for bound regressions. nu roles are not scored.
  std::vector<std::pair<std::string, double>> holdout_error;
};

/// Single-writer streaming estimator.
///
/// Observations are buffered and assigned to folds on arrival. At a peek the
/// stream refits nuisances if the buffer crossed the next refit size (each
/// fold's models train on every other fold's data seen so far), scores every
/// buffered observation with its own fold's models, solves the cross-fitted
/// moment equation, and reports the mixture-boundary interval together with
/// its running intersection.
class Stream {
 public:
  explicit Stream(StreamConfig config)
      : config_(std::move(config)), plan_(config_.k_folds, config_.fold_rule, config_.seed) {
    config_.validate();
    config_.classifier.clip_eps = config_.epsilon;
    if (is_pate()) gamma_ = GammaParam(config_.gamma);
  }

  const StreamConfig& config() const { return config_; }
  std::int64_t size() const { return static_cast<std::int64_t>(obs_.size()); }
  const FoldPlan& plan() const { return plan_; }
  const std::vector<CsPoint>& log() const { return log_; }
  std::optional<double> rho() const { return rho_; }
  bool stopped() const { return stopped_; }
  std::size_t post_stop_count() const { return post_stop_; }
  std::size_t clip_count() const { return clip_count_; }
  const std::vector<RefitRecord>& refits() const { return refits_; }
  const std::optional<DmlFit<1>>& last_fit() const { return last_fit_; }
  const std::vector<Observation>& observations() const { return obs_; }
  const std::vector<NuisanceEval>& evaluations() const { return evals_; }

  void push(Observation obs) {
    validate_observation(obs);
    if (!x_dim_) x_dim_ = obs.x.size();
    obs_.push_back(std::move(obs));
    plan_.append();
    if (stopped_) ++post_stop_;
  }

  /// Interval at the current sample size; throws NotReadyError before burn-in
  /// or while some fold's training data lacks a required arm.
  CsPoint peek() {
    const std::int64_t n = size();
    if (n < config_.burn_in) {
      throw NotReadyError("need " + std::to_string(config_.burn_in) + " observations, have " +
                          std::to_string(n));
    }
    if (!log_.empty() && log_.back().n == n) return log_.back();
    if (needs_refit(n)) refit(n);
    evaluate_pending();

    std::vector<ScalarScore> scores;
    scores.reserve(obs_.size());
    for (std::size_t i = 0; i < obs_.size(); ++i) scores.push_back(score_at(i));
    DmlFit<1> fit = solve_dml<1>(std::span<const ScalarScore>(scores), plan_, config_.aggregation);
    const double sigma_sq = fit.sigma_sq_hat(0, 0);
    if (!rho_) rho_ = config_.rho ? *config_.rho : tune_rho(config_.alpha, n, sigma_sq);

    CsPoint p;
    p.n = n;
    p.theta_hat = fit.theta_hat(0);
    p.sigma_hat = std::sqrt(sigma_sq);
    const double r =
        scalar_radius(n, MixtureParams{*rho_, config_.alpha, 1}, p.sigma_hat, config_.boundary);
    p.lower = p.theta_hat - r;
    p.upper = p.theta_hat + r;
    if (log_.empty()) {
      p.lower_int = p.lower;
      p.upper_int = p.upper;
    } else {
      const CsPoint& prev = log_.back();
      p.lower_int = std::max(prev.lower_int, p.lower);
      p.upper_int = std::min(prev.upper_int, p.upper);
      p.empty_int = prev.empty_int;
    }
    p.empty_int = p.empty_int || p.lower_int > p.upper_int;
    if (config_.stop_rule && !stopped_) stopped_ = avdml::check_stop(p, *config_.stop_rule).stop;
    p.stopped = stopped_;
    last_fit_ = std::move(fit);
    log_.push_back(p);
    return p;
  }

  /// peek(), with not-ready conditions reported as an empty optional.
  std::optional<CsPoint> try_peek() {
    try {
      return peek();
    } catch (const NotReadyError&) {
      return std::nullopt;
    }
  }

  /// Evaluates `rule` on the latest intersected interval; a stop marks the
  /// stream stopped (later arrivals are still accepted and counted).
  StopDecision check_stop(const StopRule& rule) {
    if (log_.empty()) throw NotReadyError("check_stop needs at least one peek");
    StopDecision d = avdml::check_stop(log_.back(), rule);
    if (d.stop) stopped_ = true;
    return d;
  }

  /// True when no observation was scored with a model trained on it.
  bool verify_out_of_fold() const {
    for (std::size_t i = 0; i < evaluated_; ++i) {
      const auto& models = models_[static_cast<std::size_t>(plan_.assignments[i])];
      for (const auto& m : models) {
        if (m && m->trained_on(i)) return false;
      }
    }
    return true;
  }

  /// Fitted model for a role in a fold, if the estimand uses it.
  const nuisance::FittedNuisance* model(int fold, Role role) const {
    if (fold < 0 || static_cast<std::size_t>(fold) >= models_.size()) return nullptr;
    const auto& m = models_[static_cast<std::size_t>(fold)][static_cast<std::size_t>(role)];
    return m ? &*m : nullptr;
  }

  /// Score of the i-th buffered observation under the current nuisance fits.
  ScalarScore score_at(std::size_t i) const {
    const Observation& o = obs_[i];
    const NuisanceEval& v = evals_[i];
    switch (config_.estimand) {
      case Estimand::ate: return aipw_score(o, v);
      case Estimand::plr: return plr_score(o, v);
      case Estimand::late: return late_score(o, v);
      case Estimand::pate_lower: return pate_score(o, v, *gamma_, BoundSide::lower);
      case Estimand::pate_upper: return pate_score(o, v, *gamma_, BoundSide::upper);
    }
    throw ParameterError("unknown estimand");
  }

 private:
  using FoldModels = std::array<std::optional<nuisance::FittedNuisance>, kRoleCount>;

  bool is_pate() const {
    return config_.estimand == Estimand::pate_lower || config_.estimand == Estimand::pate_upper;
  }

  void validate_observation(const Observation& o) const {
    const std::string at = " (observation " + std::to_string(obs_.size() + 1) + ")";
    if (o.a != 0 && o.a != 1) throw IngestError("treatment must be 0 or 1" + at);
    if (o.z && *o.z != 0 && *o.z != 1) throw IngestError("instrument must be 0 or 1" + at);
    if (needs_instrument(config_.estimand) && !o.z) {
      throw IngestError("estimand " + to_string(config_.estimand) + " requires an instrument z" + at);
    }
    if (!std::isfinite(o.y)) throw IngestError("outcome is not finite" + at);
    for (double v : o.x) {
      if (!std::isfinite(v)) throw IngestError("covariate is not finite" + at);
    }
    if (x_dim_ && o.x.size() != *x_dim_) {
      throw IngestError("expected " + std::to_string(*x_dim_) + " covariates, got " +
                        std::to_string(o.x.size()) + at);
    }
  }

  bool needs_refit(std::int64_t n) const {
    if (!fitted_upto_) return true;
    if (config_.refit_factor == 1.0) return n > *fitted_upto_;
    return n >= next_refit_;
  }

  struct RoleTask {
    Role role;
    std::function<bool(const Observation&)> include;
    std::function<double(const Observation&)> target;
  };

  std::vector<RoleTask> role_tasks() const {
    auto all = [](const Observation&) { return true; };
    auto treated = [](const Observation& o) { return o.a == 1; };
    auto control = [](const Observation& o) { return o.a == 0; };
    auto z1 = [](const Observation& o) { return o.z && *o.z == 1; };
    auto z0 = [](const Observation& o) { return o.z && *o.z == 0; };
    auto y = [](const Observation& o) { return o.y; };
    auto a = [](const Observation& o) { return static_cast<double>(o.a); };
    auto z = [](const Observation& o) { return static_cast<double>(o.z.value_or(0)); };
    switch (config_.estimand) {
      case Estimand::ate:
        return {{Role::g1, treated, y}, {Role::g0, control, y}, {Role::e, all, a}};
      case Estimand::plr:
        return {{Role::m, all, y}, {Role::e, all, a}};
      case Estimand::late:
        return {{Role::g_t, z1, y}, {Role::g_c, z0, y}, {Role::m_t, z1, a},
                {Role::m_c, z0, a}, {Role::e, all, z}};
      case Estimand::pate_lower:
      case Estimand::pate_upper:
        return {{Role::g1, treated, y}, {Role::nu1, treated, y}, {Role::g0, control, y},
                {Role::nu0, control, y}, {Role::e, all, a}};
    }
    return {};
  }

  // Gamma-loss weight for a bound regression role.
  double role_weight(Role r) const {
    const bool lower_stream = config_.estimand == Estimand::pate_lower;
    // lower band: mu1^- (Gamma) - mu0^+ (1/Gamma); upper band: mu1^+ (1/Gamma) - mu0^- (Gamma)
    const bool treated_role = r == Role::g1 || r == Role::nu1;
    const bool use_gamma = lower_stream == treated_role;
    return use_gamma ? gamma_->gamma : gamma_->inverse();
  }

  nuisance::Dataset build_dataset(const std::vector<std::size_t>& rows,
                                  const std::function<double(const Observation&)>& target) const {
    nuisance::Dataset d;
    const auto dim = static_cast<Eigen::Index>(x_dim_.value_or(0));
    d.x.resize(static_cast<Eigen::Index>(rows.size()), dim);
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    d.ids = rows;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Observation& o = obs_[rows[r]];
      for (Eigen::Index j = 0; j < dim; ++j) {
        d.x(static_cast<Eigen::Index>(r), j) = o.x[static_cast<std::size_t>(j)];
      }
      d.y(static_cast<Eigen::Index>(r)) = target(o);
    }
    return d;
  }

  void refit(std::int64_t n) {
    const auto tasks = role_tasks();
    const auto k = static_cast<std::size_t>(config_.k_folds);
    const auto count = static_cast<std::size_t>(n);

    // Every fold must be populated and every role must have training rows.
    constexpr std::size_t kMinRows = 2;
    const auto sizes = plan_.fold_sizes();
    for (std::size_t f = 0; f < k; ++f) {
      if (sizes[f] == 0) throw NotReadyError("fold " + std::to_string(f) + " is empty");
    }
    std::vector<std::vector<std::vector<std::size_t>>> rows(k, std::vector<std::vector<std::size_t>>(tasks.size()));
    for (std::size_t i = 0; i < count; ++i) {
      const auto own = static_cast<std::size_t>(plan_.assignments[i]);
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (!tasks[t].include(obs_[i])) continue;
        for (std::size_t f = 0; f < k; ++f) {
          if (f != own) rows[f][t].push_back(i);
        }
      }
    }
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (rows[f][t].size() < kMinRows) {
          throw NotReadyError("fold " + std::to_string(f) + " has too few training rows for " +
                              role_name(tasks[t].role));
        }
      }
    }

    std::vector<FoldModels> models(k);
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Role role = tasks[t].role;
        if (role == Role::nu1 || role == Role::nu0) continue;  // needs its arm regression first
        const auto data = build_dataset(rows[f][t], tasks[t].target);
        models[f][static_cast<std::size_t>(role)] = fit_role(role, data);
      }
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Role role = tasks[t].role;
        if (role != Role::nu1 && role != Role::nu0) continue;
        const Role arm = role == Role::nu1 ? Role::g1 : Role::g0;
        const auto data = build_dataset(rows[f][t], tasks[t].target);
        models[f][static_cast<std::size_t>(role)] = nuisance::fit_nu(
            data, *models[f][static_cast<std::size_t>(arm)], role_weight(role), config_.classifier);
      }
    }
    models_ = std::move(models);
    fitted_upto_ = n;
    if (config_.refit_factor > 1.0) {
      double next = static_cast<double>(config_.burn_in);
      while (next <= static_cast<double>(n)) next *= config_.refit_factor;
      next_refit_ = static_cast<std::int64_t>(std::ceil(next));
    }
    evaluated_ = 0;
    evals_.clear();
    clip_count_ = 0;
    evaluate_pending();
    refits_.push_back(holdout_errors(n, tasks));
  }

  nuisance::FittedNuisance fit_role(Role role, const nuisance::Dataset& data) const {
    switch (role) {
      case Role::e: {
        auto m = nuisance::fit_learner(data, config_.classifier);
        m.set_clip(config_.epsilon, 1.0 - config_.epsilon);
        return m;
      }
      case Role::m_t:
      case Role::m_c: {
        auto m = nuisance::fit_learner(data, config_.regression);
        if (m.link() == nuisance::Link::identity) m.set_clip(0.0, 1.0);
        return m;
      }
      case Role::g1:
      case Role::g0:
        if (is_pate()) return nuisance::fit_g1_gamma(data, role_weight(role), config_.regression);
        return nuisance::fit_learner(data, config_.regression);
      default:
        return nuisance::fit_learner(data, config_.regression);
    }
  }

  void evaluate_pending() {
    evals_.resize(obs_.size());
    for (std::size_t i = evaluated_; i < obs_.size(); ++i) {
      const auto& models = models_[static_cast<std::size_t>(plan_.assignments[i])];
      const std::span<const double> x(obs_[i].x);
      NuisanceEval v;
      auto get = [&](Role r) -> const std::optional<nuisance::FittedNuisance>& {
        return models[static_cast<std::size_t>(r)];
      };
      if (get(Role::g1)) v.g1 = get(Role::g1)->predict(x);
      if (get(Role::g0)) v.g0 = get(Role::g0)->predict(x);
      if (get(Role::g_t)) v.g_t = get(Role::g_t)->predict(x);
      if (get(Role::g_c)) v.g_c = get(Role::g_c)->predict(x);
      if (get(Role::m_t)) v.m_t = get(Role::m_t)->predict(x);
      if (get(Role::m_c)) v.m_c = get(Role::m_c)->predict(x);
      if (get(Role::m)) v.m = get(Role::m)->predict(x);
      if (get(Role::nu1)) v.nu = get(Role::nu1)->predict(x);
      if (get(Role::nu0)) v.nu0 = get(Role::nu0)->predict(x);
      if (get(Role::e)) {
        v.e = get(Role::e)->predict(x);
        if (get(Role::e)->clipped(x)) ++clip_count_;
      }
      evals_[i] = v;
    }
    evaluated_ = obs_.size();
  }

  RefitRecord holdout_errors(std::int64_t n, const std::vector<RoleTask>& tasks) const {
    RefitRecord rec;
    rec.n = n;
    for (const auto& task : tasks) {
      if (task.role == Role::nu1 || task.role == Role::nu0) continue;
      const bool bound = is_pate() && (task.role == Role::g1 || task.role == Role::g0);
      double sum = 0.0;
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        if (!task.include(obs_[i])) continue;
        const auto& m = models_[static_cast<std::size_t>(plan_.assignments[i])]
                               [static_cast<std::size_t>(task.role)];
        const double pred = m->predict(obs_[i].x);
        const double target = task.target(obs_[i]);
        sum += bound ? gamma_loss(target, pred, role_weight(task.role)).value
                     : (target - pred) * (target - pred);
        ++cnt;
      }
      rec.holdout_error.emplace_back(role_name(task.role),
                                     cnt ? std::sqrt(sum / static_cast<double>(cnt)) : 0.0);
    }
    return rec;
  }

  StreamConfig config_;
  FoldPlan plan_;
  std::optional<GammaParam> gamma_;
  std::optional<std::size_t> x_dim_;
  std::vector<Observation> obs_;
  std::vector<NuisanceEval> evals_;
  std::size_t evaluated_ = 0;
  std::vector<FoldModels> models_;
  std::optional<std::int64_t> fitted_upto_;
  std::int64_t next_refit_ = 0;
  std::optional<double> rho_;
  std::vector<CsPoint> log_;
  std::optional<DmlFit<1>> last_fit_;
  std::vector<RefitRecord> refits_;
  bool stopped_ = false;
  std::size_t post_stop_ = 0;
  std::size_t clip_count_ = 0;
};

/// Sequential band for the partially identified ATE, combining a pate_lower
/// and a pate_upper stream peeked at the same n.
struct BandPoint {
  std::int64_t n = 0;
  double lower = 0.0;      // lower CS bound of mu1^- - mu0^+
  double upper = 0.0;      // upper CS bound of mu1^+ - mu0^-
  double lower_int = 0.0;
  double upper_int = 0.0;
  double lower_estimate = 0.0;
  double upper_estimate = 0.0;

  double width() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

inline BandPoint pate_band(const CsPoint& lower, const CsPoint& upper) {
  if (lower.n != upper.n) {
    throw SyncError("band streams peeked at different sizes: " + std::to_string(lower.n) +
                    " vs " + std::to_string(upper.n));
  }
  return {lower.n,         lower.lower,     upper.upper, lower.lower_int,
          upper.upper_int, lower.theta_hat, upper.theta_hat};
}

inline BandPoint pate_band(const Stream& lower, const Stream& upper) {
  if (lower.config().estimand != Estimand::pate_lower ||
      upper.config().estimand != Estimand::pate_upper) {
    throw ParameterError("pate_band needs a pate_lower and a pate_upper stream");
  }
  if (lower.log().empty() || upper.log().empty()) throw NotReadyError("band streams not peeked");
  return pate_band(lower.log().back(), upper.log().back());
}

}  // namespace avdml
