#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "avdml/engine.hpp"
#include "avdml/sim.hpp"

using namespace avdml;

namespace {

StreamConfig fast_config(Estimand e, int k = 5, std::int64_t burn_in = 200) {
  StreamConfig c;
  c.estimand = e;
  c.k_folds = k;
  c.burn_in = burn_in;
  c.regression.rounds = 40;
  return c;
}

std::vector<Observation> late_data(std::int64_t n, std::uint64_t seed) {
  return sim::gen_late(n, sim::LateDgpParams::draw(seed), seed).observations;
}

std::vector<Observation> ate_data(std::int64_t n, std::uint64_t seed, double gamma_data = 1.0) {
  auto p = sim::PartialIdDgpParams::draw(seed);
  p.gamma_data = gamma_data;
  return sim::gen_partial_id(n, p, seed).observations;
}

void feed(Stream& s, const std::vector<Observation>& data, std::size_t from, std::size_t to) {
  for (std::size_t i = from; i < to; ++i) s.push(data[i]);
}

Observation obs(double y, int a, std::vector<double> x, std::optional<int> z = std::nullopt) {
  Observation o;
  o.y = y;
  o.a = a;
  o.x = std::move(x);
  o.z = z;
  return o;
}

CsPoint point(double lo, double hi) {
  CsPoint p;
  p.n = 100;
  p.lower = p.lower_int = lo;
  p.upper = p.upper_int = hi;
  return p;
}

}  // namespace

TEST(EstimandNames, RoundTrip) {
  for (Estimand e : {Estimand::ate, Estimand::late, Estimand::pate_lower, Estimand::pate_upper, Estimand::plr}) {
    EXPECT_EQ(parse_estimand(to_string(e)), e);
  }
  EXPECT_FALSE(parse_estimand("att").has_value());
}

TEST(StreamPush, RoundRobinFoldSizes) {
  Stream s(fast_config(Estimand::ate, 5, 10));
  for (int i = 0; i < 10; ++i) s.push(obs(i, i % 2, {0.1 * i}));
  EXPECT_EQ(s.plan().fold_sizes(), (std::vector<std::size_t>{2, 2, 2, 2, 2}));
}

TEST(StreamPush, LateNeedsInstrument) {
  Stream s(fast_config(Estimand::late));
  EXPECT_THROW(s.push(obs(1.0, 1, {0.5})), IngestError);
  s.push(obs(1.0, 1, {0.5}, 1));
  EXPECT_EQ(s.size(), 1);
}

TEST(StreamPush, SchemaChecks) {
  Stream s(fast_config(Estimand::ate));
  s.push(obs(1.0, 1, {0.5, 0.2}));
  EXPECT_THROW(s.push(obs(1.0, 1, {0.5})), IngestError);
  EXPECT_THROW(s.push(obs(1.0, 2, {0.5, 0.1})), IngestError);
  EXPECT_THROW(s.push(obs(std::nan(""), 0, {0.5, 0.1})), IngestError);
  EXPECT_EQ(s.size(), 1);
}

TEST(StreamConfigTest, Validation) {
  auto c = fast_config(Estimand::ate);
  c.burn_in = 3;
  EXPECT_THROW(Stream{c}, ParameterError);
  c = fast_config(Estimand::ate);
  c.alpha = 1.0;
  EXPECT_THROW(Stream{c}, ParameterError);
  c = fast_config(Estimand::pate_lower);
  c.gamma = 0.5;
  EXPECT_THROW(Stream{c}, ParameterError);
}

TEST(StreamPeek, NotReadyBeforeBurnIn) {
  Stream s(fast_config(Estimand::ate));
  const auto data = ate_data(199, 1);
  feed(s, data, 0, data.size());
  EXPECT_THROW(s.peek(), NotReadyError);
  EXPECT_FALSE(s.try_peek().has_value());
  EXPECT_THROW(s.check_stop(StopRule::excludes_zero()), NotReadyError);
}

TEST(StreamPeek, NotReadyWhenAnArmIsMissing) {
  Stream s(fast_config(Estimand::ate, 5, 20));
  for (int i = 0; i < 50; ++i) s.push(obs(0.1 * i, 1, {0.01 * i}));
  EXPECT_THROW(s.peek(), NotReadyError);
}

TEST(StreamPeek, Idempotent) {
  Stream s(fast_config(Estimand::ate));
  const auto data = ate_data(400, 2);
  feed(s, data, 0, data.size());
  const CsPoint a = s.peek();
  const CsPoint b = s.peek();
  EXPECT_EQ(a.theta_hat, b.theta_hat);
  EXPECT_EQ(a.lower, b.lower);
  EXPECT_EQ(a.upper_int, b.upper_int);
  EXPECT_EQ(s.log().size(), 1u);
}

TEST(StreamPeek, NullEffectConstantOutcome) {
  auto c = fast_config(Estimand::ate, 5, 50);
  c.rho = 0.5;
  Stream s(c);
  for (int i = 0; i < 100; ++i) s.push(obs(3.0, i % 2, {0.01 * (i % 17)}));
  const CsPoint p = s.peek();
  EXPECT_NEAR(p.theta_hat, 0.0, 1e-9);
  EXPECT_NEAR(p.sigma_hat, 0.0, 1e-9);
  EXPECT_NEAR(p.upper - p.lower, 0.0, 1e-8);
}

TEST(StreamPeek, RadiusFollowsBoundary) {
  auto c = fast_config(Estimand::ate);
  c.rho = 0.3;
  Stream s(c);
  const auto data = ate_data(300, 3);
  feed(s, data, 0, data.size());
  const CsPoint p = s.peek();
  const double r = scalar_radius(300, {0.3, 0.05, 1}, p.sigma_hat);
  EXPECT_NEAR(p.upper - p.theta_hat, r, 1e-12);
  EXPECT_NEAR(p.theta_hat - p.lower, r, 1e-12);
}

TEST(StreamPeek, RhoTunedAtFirstPeekThenFrozen) {
  Stream s(fast_config(Estimand::ate));
  const auto data = ate_data(1200, 4);
  feed(s, data, 0, 250);
  const CsPoint first = s.peek();
  ASSERT_TRUE(s.rho().has_value());
  const double rho = *s.rho();
  EXPECT_EQ(rho, tune_rho(0.05, 250, first.sigma_hat * first.sigma_hat));
  for (std::size_t n = 250; n < 1200; n += 190) {
    feed(s, data, n, std::min<std::size_t>(n + 190, 1200));
    const CsPoint p = s.peek();
    EXPECT_EQ(*s.rho(), rho);
    EXPECT_NEAR(p.upper - p.theta_hat, scalar_radius(p.n, {rho, 0.05, 1}, p.sigma_hat), 1e-12);
  }
}

TEST(StreamPeek, IntersectionNested) {
  Stream s(fast_config(Estimand::ate));
  const auto data = ate_data(2000, 5);
  feed(s, data, 0, 200);
  for (std::size_t n = 200; n < 2000; n += 50) {
    feed(s, data, n, n + 50);
    s.peek();
  }
  const auto& log = s.log();
  for (std::size_t i = 1; i < log.size(); ++i) {
    EXPECT_GE(log[i].lower_int, log[i - 1].lower_int);
    EXPECT_LE(log[i].upper_int, log[i - 1].upper_int);
    EXPECT_GE(log[i].lower_int, log[i].lower);
    EXPECT_LE(log[i].upper_int, log[i].upper);
  }
  EXPECT_TRUE(sim::nested(log));
}

TEST(StreamPeek, OutOfFoldPurity) {
  for (Estimand e : {Estimand::ate, Estimand::plr, Estimand::pate_lower, Estimand::late}) {
    auto c = fast_config(e, 4, 120);
    c.gamma = e == Estimand::pate_lower ? 1.5 : 1.0;
    Stream s(c);
    const auto data = e == Estimand::late ? late_data(700, 6) : ate_data(700, 6);
    feed(s, data, 0, 130);
    s.peek();
    feed(s, data, 130, 700);
    s.peek();
    EXPECT_TRUE(s.verify_out_of_fold()) << to_string(e);
    // Independent check through the training-id bookkeeping.
    bool any_model = false;
    for (std::size_t i = 0; i < s.observations().size(); ++i) {
      const int f = s.plan().assignments[i];
      for (int r = 0; r < static_cast<int>(kRoleCount); ++r) {
        const auto* m = s.model(f, static_cast<Role>(r));
        if (!m) continue;
        any_model = true;
        ASSERT_FALSE(m->trained_on(i)) << to_string(e) << " obs " << i << " role " << r;
      }
    }
    EXPECT_TRUE(any_model);
    // Every model in fold f trained on rows of other folds only.
    for (int f = 0; f < 4; ++f) {
      for (int r = 0; r < static_cast<int>(kRoleCount); ++r) {
        const auto* m = s.model(f, static_cast<Role>(r));
        if (!m) continue;
        for (std::size_t id : m->training_ids()) EXPECT_NE(s.plan().assignments[id], f);
      }
    }
  }
}

TEST(StreamPeek, DeterministicLog) {
  auto run = [] {
    auto c = fast_config(Estimand::pate_upper);
    c.gamma = 1.8;
    c.seed = 42;
    c.fold_rule = FoldRule::seeded_random;
    Stream s(c);
    const auto data = ate_data(900, 7, 1.8);
    std::ostringstream os;
    feed(s, data, 0, 200);
    for (std::size_t n = 200; n < 900; n += 100) {
      feed(s, data, n, n + 100);
      write_ndjson(os, s.peek());
    }
    return os.str();
  };
  const std::string a = run();
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, run());
}

TEST(StreamPeek, RefitScheduleIsGeometric) {
  Stream s(fast_config(Estimand::ate, 5, 200));
  const auto data = ate_data(1700, 8);
  feed(s, data, 0, 200);
  for (std::size_t n = 200; n < 1700; n += 100) {
    feed(s, data, n, n + 100);
    s.peek();
  }
  std::vector<std::int64_t> at;
  for (const auto& r : s.refits()) at.push_back(r.n);
  EXPECT_EQ(at, (std::vector<std::int64_t>{300, 400, 800, 1600}));
}

TEST(StreamPeek, LateCoversTruthAtFiveThousand) {
  StreamConfig c;
  c.estimand = Estimand::late;
  c.k_folds = 4;
  c.burn_in = 500;
  Stream s(c);
  const auto data = late_data(5000, 9);
  feed(s, data, 0, data.size());
  const CsPoint p = s.peek();
  EXPECT_LE(p.lower, 3.0);
  EXPECT_GE(p.upper, 3.0);
  EXPECT_LT(p.upper - p.lower, 2.0);
}

TEST(StreamStop, PostStopArrivalsAreCounted) {
  auto c = fast_config(Estimand::ate);
  c.stop_rule = StopRule::excludes_zero();
  Stream s(c);
  // Large effect: the interval leaves zero at the first peek.
  for (int i = 0; i < 200; ++i) s.push(obs(10.0 * (i % 2) + 0.01 * (i % 7), i % 2, {0.001 * i}));
  const CsPoint p = s.peek();
  EXPECT_TRUE(p.stopped);
  EXPECT_TRUE(s.stopped());
  EXPECT_EQ(s.post_stop_count(), 0u);
  s.push(obs(1.0, 1, {0.5}));
  s.push(obs(1.0, 0, {0.5}));
  EXPECT_EQ(s.post_stop_count(), 2u);
  EXPECT_EQ(s.size(), 202);
}

TEST(CheckStop, Rules) {
  EXPECT_TRUE(check_stop(point(0.2, 0.9), StopRule::excludes_zero()).stop);
  EXPECT_FALSE(check_stop(point(-0.1, 0.9), StopRule::excludes_zero()).stop);
  EXPECT_TRUE(check_stop(point(-0.9, -0.2), StopRule::excludes_zero()).stop);
  EXPECT_TRUE(check_stop(point(0.0, 0.5), StopRule::width_below(0.6)).stop);
  EXPECT_FALSE(check_stop(point(0.0, 0.7), StopRule::width_below(0.6)).stop);
  EXPECT_TRUE(check_stop(point(0.0, 0.7), StopRule::sign_determined()).stop);
  EXPECT_FALSE(check_stop(point(-0.01, 0.7), StopRule::sign_determined()).stop);
  CsPoint crossed = point(0.3, 0.2);
  crossed.empty_int = true;
  EXPECT_TRUE(check_stop(crossed, StopRule::width_below(0.0)).stop);
}

TEST(CheckStop, ReadsIntersection) {
  CsPoint p = point(-1.0, 1.0);
  p.lower_int = 0.1;
  EXPECT_TRUE(check_stop(p, StopRule::excludes_zero()).stop);
}

TEST(NdjsonRecord, FieldOrder) {
  const CsPoint p = point(-1.0, 2.0);
  const std::string line = to_json(p).dump();
  const char* keys[] = {"\"n\"", "\"estimate\"", "\"sigma\"", "\"lower\"", "\"upper\"",
                        "\"lower_int\"", "\"upper_int\"", "\"stopped\""};
  std::size_t last = 0;
  for (const char* k : keys) {
    const auto at = line.find(k, last);
    ASSERT_NE(at, std::string::npos) << k;
    last = at;
  }
}

TEST(PateBand, MismatchedSizesRejected) {
  CsPoint a = point(0, 1), b = point(0, 1);
  b.n = 101;
  EXPECT_THROW(pate_band(a, b), SyncError);
  EXPECT_NO_THROW(pate_band(a, a));
}

TEST(PateBand, StreamsMustBeBoundStreams) {
  Stream a(fast_config(Estimand::ate)), b(fast_config(Estimand::pate_upper));
  EXPECT_THROW(pate_band(a, b), ParameterError);
}

TEST(PateBand, UnitGammaCollapsesToAipw) {
  auto c = fast_config(Estimand::pate_lower);
  c.gamma = 1.0;
  Stream lo(c);
  c.estimand = Estimand::pate_upper;
  Stream hi(c);
  c.estimand = Estimand::ate;
  Stream ate(c);
  const auto data = ate_data(600, 10);
  for (const auto& o : data) {
    lo.push(o);
    hi.push(o);
    ate.push(o);
  }
  lo.peek();
  hi.peek();
  const CsPoint a = ate.peek();
  const BandPoint b = pate_band(lo, hi);
  EXPECT_NEAR(b.lower_estimate, a.theta_hat, 1e-9);
  EXPECT_NEAR(b.upper_estimate, a.theta_hat, 1e-9);
  EXPECT_NEAR(b.lower, a.lower, 1e-9);
  EXPECT_NEAR(b.upper, a.upper, 1e-9);
}

TEST(PateBand, WiderThanPointIdentifiedSequence) {
  auto c = fast_config(Estimand::pate_lower);
  c.gamma = std::exp(0.6);
  Stream lo(c);
  c.estimand = Estimand::pate_upper;
  Stream hi(c);
  c.estimand = Estimand::ate;
  Stream ate(c);
  const auto data = ate_data(2000, 11, std::exp(0.6));
  for (std::size_t n = 0; n < data.size(); ++n) {
    lo.push(data[n]);
    hi.push(data[n]);
    ate.push(data[n]);
    if ((n + 1) % 250 == 0) {
      const BandPoint b = pate_band(lo.peek(), hi.peek());
      const CsPoint a = ate.peek();
      EXPECT_GE(b.width(), a.upper - a.lower) << "n=" << b.n;
      EXPECT_LE(b.lower_estimate, b.upper_estimate);
    }
  }
}
