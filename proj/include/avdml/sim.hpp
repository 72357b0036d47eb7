#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "avdml/detail/rng.hpp"
#include "avdml/engine.hpp"
#include "avdml/errors.hpp"
#include "avdml/scores.hpp"

namespace avdml::sim {

namespace detail {

inline Eigen::VectorXd normal_vector(std::mt19937_64& rng, int d, double sd) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (int j = 0; j < d; ++j) v(j) = sd * n01(rng);
  return v;
}

inline double dot(const Eigen::VectorXd& w, const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += w(static_cast<Eigen::Index>(j)) * x[j];
  return s;
}

}  // namespace detail

/// Confounded assignment with unobserved U:
///   X ~ U[0,1]^d, U | X ~ N(0, (1 + sin(2.5 X1)/2)^2),
///   Y(0) = beta'X + 5U, Y(1) = Y(0) + tau,
///   P(A=1 | X, U) = logistic(alpha0 + X'mu + log(gamma_data) 1{U > 0}).
struct PartialIdDgpParams {
  int d = 4;
  double tau = -0.5;
  double gamma_data = std::exp(0.6);
  double alpha0 = 0.0;
  Eigen::VectorXd mu;
  Eigen::VectorXd beta;
  std::uint64_t seed = 0;

  /// Draws mu and beta from N(0, I_d) with `seed`.
  static PartialIdDgpParams draw(std::uint64_t seed, int d = 4) {
    PartialIdDgpParams p;
    p.d = d;
    p.seed = seed;
    std::mt19937_64 rng(avdml::detail::derive_seed(seed, 0x9e11));
    p.mu = detail::normal_vector(rng, d, 1.0);
    p.beta = detail::normal_vector(rng, d, 1.0);
    return p;
  }

  void validate() const {
    if (d < 1) throw DgpError("partial-id DGP needs d >= 1");
    if (!(gamma_data >= 1.0)) throw DgpError("gamma_data must be >= 1");
    if (mu.size() != d || beta.size() != d) throw DgpError("mu and beta must have length d");
  }

  double treatment_probability(const std::vector<double>& x, double u) const {
    const double eta = alpha0 + detail::dot(mu, x) + (u > 0.0 ? std::log(gamma_data) : 0.0);
    return 1.0 / (1.0 + std::exp(-eta));
  }
};

struct PartialIdUnit {
  double u = 0.0;
  double y0 = 0.0;
  double y1 = 0.0;
  double propensity = 0.0;
};

struct PartialIdSample {
  std::vector<Observation> observations;
  std::vector<PartialIdUnit> units;
  double tau = 0.0;
  double gamma_data = 1.0;
};

inline PartialIdSample gen_partial_id(std::int64_t n, const PartialIdDgpParams& params,
                                      std::uint64_t seed) {
  if (n < 1) throw DgpError("gen_partial_id: n must be >= 1");
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  PartialIdSample out;
  out.tau = params.tau;
  out.gamma_data = params.gamma_data;
  out.observations.reserve(static_cast<std::size_t>(n));
  out.units.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Observation o;
    o.x.resize(static_cast<std::size_t>(params.d));
    for (double& v : o.x) v = unif(rng);
    const double u = (1.0 + 0.5 * std::sin(2.5 * o.x[0])) * n01(rng);
    PartialIdUnit unit;
    unit.u = u;
    unit.y0 = detail::dot(params.beta, o.x) + 5.0 * u;
    unit.y1 = unit.y0 + params.tau;
    unit.propensity = params.treatment_probability(o.x, u);
    o.a = unif(rng) < unit.propensity ? 1 : 0;
    o.y = o.a == 1 ? unit.y1 : unit.y0;
    out.observations.push_back(std::move(o));
    out.units.push_back(unit);
  }
  return out;
}

/// Odds ratio of treatment between two latent values at the same X.
inline double assignment_odds_ratio(const PartialIdDgpParams& params, const std::vector<double>& x,
                                    double u, double u_prime) {
  const double p = params.treatment_probability(x, u);
  const double q = params.treatment_probability(x, u_prime);
  return (p / (1.0 - p)) / (q / (1.0 - q));
}

/// Binary instrument with one-sided latent index:
///   X ~ N(0, I_d), U | X ~ N(0, (0.5 + sin X1)^2), Z ~ Bern(p),
///   A = 1{alpha_z Z + U > 0}, Y = theta A + cos(U)(beta'X + U).
struct LateDgpParams {
  int d = 2;
  double theta = 3.0;
  double alpha_z = 2.0;
  double p_instrument = 0.4;
  Eigen::VectorXd beta;
  std::uint64_t seed = 0;

  /// Draws beta from N(0, 0.5 I_d) with `seed`.
  static LateDgpParams draw(std::uint64_t seed, int d = 2) {
    LateDgpParams p;
    p.d = d;
    p.seed = seed;
    std::mt19937_64 rng(avdml::detail::derive_seed(seed, 0x1a7e));
    p.beta = detail::normal_vector(rng, d, std::sqrt(0.5));
    return p;
  }

  void validate() const {
    if (d < 1) throw DgpError("LATE DGP needs d >= 1");
    if (!(alpha_z > 0.0)) throw DgpError("alpha_z must be positive");
    if (!(p_instrument > 0.0 && p_instrument < 1.0)) throw DgpError("p_instrument must lie in (0,1)");
    if (beta.size() != d) throw DgpError("beta must have length d");
  }
};

struct LateUnit {
  double u = 0.0;
  int a0 = 0;  // treatment if Z = 0
  int a1 = 0;  // treatment if Z = 1
  bool complier() const { return a1 == 1 && a0 == 0; }
};

struct LateSample {
  std::vector<Observation> observations;
  std::vector<LateUnit> units;
  double theta = 0.0;
};

/// `validate_relevance` = false allows alpha_z <= 0, which breaks the
/// instrument; it exists to exercise identification failures.
inline LateSample gen_late(std::int64_t n, const LateDgpParams& params, std::uint64_t seed,
                           bool validate_relevance = true) {
  if (n < 1) throw DgpError("gen_late: n must be >= 1");
  if (validate_relevance) {
    params.validate();
  } else if (params.beta.size() != params.d) {
    throw DgpError("beta must have length d");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::bernoulli_distribution bern(params.p_instrument);
  LateSample out;
  out.theta = params.theta;
  out.observations.reserve(static_cast<std::size_t>(n));
  out.units.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Observation o;
    o.x.resize(static_cast<std::size_t>(params.d));
    for (double& v : o.x) v = n01(rng);
    const double u = (0.5 + std::sin(o.x[0])) * n01(rng);
    const int z = bern(rng) ? 1 : 0;
    LateUnit unit{u, u > 0.0 ? 1 : 0, params.alpha_z + u > 0.0 ? 1 : 0};
    o.z = z;
    o.a = z == 1 ? unit.a1 : unit.a0;
    o.y = params.theta * o.a + std::cos(u) * (detail::dot(params.beta, o.x) + u);
    out.observations.push_back(std::move(o));
    out.units.push_back(unit);
  }
  return out;
}

enum class Dgp { late, partial_id };

struct CoverageConfig {
  Dgp dgp = Dgp::late;
  int reps = 200;
  std::int64_t n_max = 5000;
  std::int64_t peek_every = 250;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  StreamConfig stream;   // estimand, alpha, burn-in, learners
  LateDgpParams late = LateDgpParams::draw(0);
  PartialIdDgpParams partial_id = PartialIdDgpParams::draw(0);

  /// Peek sizes: multiples of peek_every from burn_in through n_max.
  std::vector<std::int64_t> grid() const {
    std::vector<std::int64_t> g;
    for (std::int64_t n = peek_every; n <= n_max; n += peek_every) {
      if (n >= stream.burn_in) g.push_back(n);
    }
    return g;
  }

  double truth() const { return dgp == Dgp::late ? late.theta : partial_id.tau; }

  void validate() const {
    if (reps < 1) throw ParameterError("reps must be >= 1");
    if (peek_every < 1) throw ParameterError("peek_every must be >= 1");
    if (n_max < stream.burn_in) throw ParameterError("n_max must be >= burn_in");
    stream.validate();
    if (dgp == Dgp::late) {
      if (stream.estimand != Estimand::late) throw ParameterError("the late DGP pairs with the late estimand");
      late.validate();
    } else {
      if (stream.estimand != Estimand::ate) {
        throw ParameterError("coverage on the partial-id DGP uses the ate estimand; use run_band for bounds");
      }
      partial_id.validate();
    }
  }
};

/// Per-rep trajectory on the peek grid. Entries for grid points where the
/// stream could not report (not ready or unidentified) carry NaN widths and
/// do not count as misses.
struct RepResult {
  std::uint64_t seed = 0;
  std::vector<CsPoint> log;
  std::vector<char> asymp_missed;  // cumulative
  std::vector<char> batch_missed;  // cumulative
  std::vector<double> asymp_width;
  std::vector<double> batch_width;
  int skipped_peeks = 0;
  bool nested = true;  // intersected bounds shrink monotonically
};

struct CurvePoint {
  std::int64_t n = 0;
  double asymp_miscoverage = 0.0;
  double batch_miscoverage = 0.0;
  double asymp_mean_width = 0.0;
  double batch_mean_width = 0.0;
};

struct CoverageResult {
  std::vector<std::int64_t> grid;
  std::vector<CurvePoint> curve;
  std::vector<RepResult> reps;
  double truth = 0.0;
};

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline bool nested(const std::vector<CsPoint>& log) {
  for (std::size_t i = 1; i < log.size(); ++i) {
    if (log[i].empty_int) continue;
    if (log[i].lower_int < log[i - 1].lower_int || log[i].upper_int > log[i - 1].upper_int) return false;
  }
  return true;
}

inline std::vector<Observation> simulate_observations(const CoverageConfig& cfg, std::uint64_t seed) {
  if (cfg.dgp == Dgp::late) return gen_late(cfg.n_max, cfg.late, seed).observations;
  return gen_partial_id(cfg.n_max, cfg.partial_id, seed).observations;
}

inline RepResult run_rep(const CoverageConfig& cfg, int rep) {
  RepResult r;
  r.seed = avdml::detail::derive_seed(cfg.seed, static_cast<std::uint64_t>(rep) + 1);
  const auto data = simulate_observations(cfg, r.seed);
  StreamConfig sc = cfg.stream;
  sc.seed = r.seed;
  Stream stream(sc);
  const double truth = cfg.truth();
  const double z = normal_quantile(1.0 - sc.alpha / 2.0);
  bool asymp_miss = false;
  bool batch_miss = false;
  std::size_t next = 0;
  for (std::int64_t n : cfg.grid()) {
    while (static_cast<std::int64_t>(next) < n) stream.push(data[next++]);
    std::optional<CsPoint> p;
    try {
      p = stream.peek();
    } catch (const NotReadyError&) {
    } catch (const IdentificationError&) {
    }
    if (!p) {
      ++r.skipped_peeks;
      r.asymp_missed.push_back(asymp_miss);
      r.batch_missed.push_back(batch_miss);
      r.asymp_width.push_back(std::nan(""));
      r.batch_width.push_back(std::nan(""));
      continue;
    }
    const double half = z * p->sigma_hat / std::sqrt(static_cast<double>(n));
    asymp_miss = asymp_miss || !(p->lower <= truth && truth <= p->upper);
    batch_miss = batch_miss || !(p->theta_hat - half <= truth && truth <= p->theta_hat + half);
    r.asymp_missed.push_back(asymp_miss);
    r.batch_missed.push_back(batch_miss);
    r.asymp_width.push_back(p->upper - p->lower);
    r.batch_width.push_back(2.0 * half);
  }
  r.log = stream.log();
  r.nested = nested(r.log);
  return r;
}

/// Runs `fn(i)` for i in [0, count) on a small thread pool; results land by
/// index, so output does not depend on scheduling.
template <class Fn>
void parallel_for(int count, unsigned threads, Fn fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(count, 1)));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

inline CoverageResult run_coverage(const CoverageConfig& cfg) {
  cfg.validate();
  CoverageResult out;
  out.grid = cfg.grid();
  out.truth = cfg.truth();
  out.reps.resize(static_cast<std::size_t>(cfg.reps));
  parallel_for(cfg.reps, cfg.threads,
               [&](int i) { out.reps[static_cast<std::size_t>(i)] = run_rep(cfg, i); });

  for (std::size_t g = 0; g < out.grid.size(); ++g) {
    CurvePoint c;
    c.n = out.grid[g];
    double aw = 0.0, bw = 0.0;
    int widths = 0;
    for (const auto& r : out.reps) {
      c.asymp_miscoverage += r.asymp_missed[g];
      c.batch_miscoverage += r.batch_missed[g];
      if (std::isfinite(r.asymp_width[g])) {
        aw += r.asymp_width[g];
        bw += r.batch_width[g];
        ++widths;
      }
    }
    const double reps = static_cast<double>(out.reps.size());
    c.asymp_miscoverage /= reps;
    c.batch_miscoverage /= reps;
    c.asymp_mean_width = widths ? aw / widths : std::nan("");
    c.batch_mean_width = widths ? bw / widths : std::nan("");
    out.curve.push_back(c);
  }
  return out;
}

struct BandRow {
  std::int64_t n = 0;
  double lower_band = 0.0;
  double upper_band = 0.0;
  double lower_band_int = 0.0;
  double upper_band_int = 0.0;
  double batch_lower_band = 0.0;
  double batch_upper_band = 0.0;
  double aipw_lower = 0.0;
  double aipw_upper = 0.0;
};

struct BandResult {
  std::vector<BandRow> rows;
  std::vector<CsPoint> lower_log;
  std::vector<CsPoint> upper_log;
  std::vector<CsPoint> aipw_log;
  double tau = 0.0;
  bool covered_all = true;  // band held tau at every reported peek
};

struct BandConfig {
  std::int64_t n_max = 10000;
  std::int64_t peek_every = 250;
  std::uint64_t seed = 0;
  StreamConfig stream;  // estimand is overridden per stream; gamma is the bound's Gamma
  PartialIdDgpParams partial_id = PartialIdDgpParams::draw(0);
};

/// One run of the bound streams on the partial-id DGP, alongside the
/// point-identified AIPW sequence for comparison.
inline BandResult run_band(const BandConfig& cfg) {
  cfg.partial_id.validate();
  const auto data = gen_partial_id(cfg.n_max, cfg.partial_id, cfg.seed).observations;
  auto make = [&](Estimand e) {
    StreamConfig sc = cfg.stream;
    sc.estimand = e;
    sc.seed = cfg.seed;
    return Stream(sc);
  };
  Stream lower = make(Estimand::pate_lower);
  Stream upper = make(Estimand::pate_upper);
  Stream aipw = make(Estimand::ate);
  const double z = normal_quantile(1.0 - cfg.stream.alpha / 2.0);

  BandResult out;
  out.tau = cfg.partial_id.tau;
  std::size_t next = 0;
  for (std::int64_t n = cfg.peek_every; n <= cfg.n_max; n += cfg.peek_every) {
    while (static_cast<std::int64_t>(next) < n) {
      lower.push(data[next]);
      upper.push(data[next]);
      aipw.push(data[next]);
      ++next;
    }
    if (n < cfg.stream.burn_in) continue;
    auto lp = lower.try_peek();
    auto up = upper.try_peek();
    auto ap = aipw.try_peek();
    if (!lp || !up || !ap) continue;
    const BandPoint b = pate_band(*lp, *up);
    const double root_n = std::sqrt(static_cast<double>(n));
    BandRow row;
    row.n = n;
    row.lower_band = b.lower;
    row.upper_band = b.upper;
    row.lower_band_int = b.lower_int;
    row.upper_band_int = b.upper_int;
    row.batch_lower_band = lp->theta_hat - z * lp->sigma_hat / root_n;
    row.batch_upper_band = up->theta_hat + z * up->sigma_hat / root_n;
    row.aipw_lower = ap->lower;
    row.aipw_upper = ap->upper;
    out.covered_all = out.covered_all && b.contains(out.tau);
    out.rows.push_back(row);
  }
  out.lower_log = lower.log();
  out.upper_log = upper.log();
  out.aipw_log = aipw.log();
  return out;
}

}  // namespace avdml::sim
