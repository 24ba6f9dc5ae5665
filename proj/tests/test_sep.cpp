#include <gtest/gtest.h>

#include <boost/math/distributions/poisson.hpp>
#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "driftlab/sep.hpp"
#include "driftlab/stats.hpp"
#include "sep_oracle.hpp"

using namespace driftlab;

TEST(EvolveSep, ZeroDurationIdentity) {
  RngStream r(1);
  auto s = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{30}, r);
  auto u = evolve_sep(s, 1.0, 0.0, r);
  EXPECT_EQ(u.slots(), s.slots());
}

TEST(EvolveSep, FullLatticeFrozen) {
  RngStream r(2);
  auto s = banded_configuration(Model::SEP, LatticeWindow{30}, 1.0);
  auto u = evolve_sep(s, 1.0, 50.0, r);
  EXPECT_EQ(u.total(), 61);
  EXPECT_EQ(u.time, 50.0);
}

TEST(EvolveSep, RejectsPcrwAndNegativeDuration) {
  RngStream r(3);
  EnvState p(Model::PCRW, LatticeWindow{5});
  EXPECT_THROW(evolve_sep(p, 1.0, 1.0, r), ParameterError);
  EnvState s(Model::SEP, LatticeWindow{5});
  EXPECT_THROW(evolve_sep(s, 1.0, -1.0, r), ParameterError);
}

TEST(TaggedParticle, MeanAndVariance) {
  EnvState base(Model::SEP, LatticeWindow{8});
  base.set(0, 1);
  RngStream r(4);
  std::vector<double> z;
  for (int i = 0; i < 10000; ++i) {
    auto res = evolve_interchange_traced(base, 1.0, 100.0, r, {0}, {100.0});
    z.push_back(double(res.trace.positions[0][0]));
  }
  double se = std::sqrt(sample_var(z) / double(z.size()));
  EXPECT_LT(std::abs(sample_mean(z)), 3 * se);
  EXPECT_NEAR(sample_var(z), 100.0, 5.0);
}

TEST(TaggedParticle, JumpCountPoisson) {
  EnvState base(Model::SEP, LatticeWindow{8});
  base.set(0, 1);
  RngStream r(5);
  std::map<int64_t, int64_t> h;
  std::vector<double> k;
  for (int i = 0; i < 10000; ++i) {
    auto res = evolve_interchange_traced(base, 1.0, 50.0, r, {0});
    h[res.trace.jumps[0]]++;
    k.push_back(double(res.trace.jumps[0]));
  }
  EXPECT_NEAR(sample_mean(k), 50.0, 3 * std::sqrt(50.0 / 1e4));
  boost::math::poisson_distribution<double> P(50.0);
  auto t = chi_square_gof(h, [&](int64_t j) { return boost::math::pdf(P, double(j)); }, 0, 150);
  EXPECT_GT(t.p_value, 1e-3);
}

TEST(Traced, NoLabelsMatchesEvolve) {
  RngStream r0(6);
  auto s = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{20}, r0);
  // Same law, not same stream: compare a count statistic in distribution.
  RngStream a(7), b(8);
  std::vector<int64_t> x, y;
  for (int i = 0; i < 5000; ++i) {
    x.push_back(interval_count(evolve_sep(s, 1.0, 2.0, a), 0, 4).count);
    y.push_back(interval_count(evolve_interchange_traced(s, 1.0, 2.0, b, {}).state, 0, 4).count);
  }
  EXPECT_GT(two_sample_chi_square(x, y).p_value, 1e-3);
}

TEST(Traced, FullLatticeTrajectoriesConstant) {
  auto s = banded_configuration(Model::SEP, LatticeWindow{10}, 1.0);
  std::vector<int64_t> labels;
  for (int64_t x = -10; x <= 10; ++x) labels.push_back(x);
  RngStream r(9);
  auto res = evolve_interchange_traced(s, 1.0, 5.0, r, labels, {1.0, 5.0});
  // On the full lattice every swap exchanges two particles: labels move but
  // positions stay a permutation of the start.
  for (size_t k = 0; k < 2; ++k) {
    std::vector<int64_t> at;
    for (auto& p : res.trace.positions) {
      int64_t q = ((p[k] + 10) % 21 + 21) % 21 - 10;
      at.push_back(q);
    }
    std::sort(at.begin(), at.end());
    EXPECT_EQ(at, labels);
  }
  EXPECT_EQ(res.state.total(), 21);
}

TEST(Traced, LabelOnEmptySite) {
  EnvState s(Model::SEP, LatticeWindow{5});
  RngStream r(10);
  EXPECT_THROW(evolve_interchange_traced(s, 1.0, 1.0, r, {0}), ParameterError);
}

TEST(MonotoneCoupled, EqualInputsStayEqual) {
  RngStream r(11);
  auto s = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{50}, r);
  auto c = monotone_coupled_evolve(s, s, 1.0, 100.0, r);
  EXPECT_EQ(c.low.slots(), c.high.slots());
  EXPECT_EQ(c.violations, 0);
}

TEST(MonotoneCoupled, EmptyLowStaysEmpty) {
  RngStream r(12);
  auto s = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{50}, r);
  auto c = monotone_coupled_evolve(EnvState(Model::SEP, LatticeWindow{50}), s, 1.0, 100.0, r);
  EXPECT_EQ(c.low.total(), 0);
  EXPECT_EQ(c.violations, 0);
}

TEST(MonotoneCoupled, ZeroViolations) {
  RngStream r(13);
  int64_t v = 0;
  for (int i = 0; i < 1000; ++i) {
    auto l = sample_stationary_layers(Model::SEP, {0.3, 0.6}, LatticeWindow{50}, r);
    auto c = monotone_coupled_evolve(l[0], l[1], 1.0, 1000.0, r);
    v += c.violations + !dominated(c.low, c.high);
  }
  EXPECT_EQ(v, 0);
}

TEST(MonotoneCoupled, RejectsUnorderedInput) {
  RngStream r(14);
  auto l = sample_stationary_layers(Model::SEP, {0.3, 0.6}, LatticeWindow{50}, r);
  EXPECT_THROW(monotone_coupled_evolve(l[1], l[0], 1.0, 1.0, r), ParameterError);
}

TEST(MaxDisplacement, HugeThreshold) {
  auto c = max_displacement_bound_check(1, 10, 10000, 200, RngStream(15));
  EXPECT_EQ(c.empirical, 0.0);
  EXPECT_TRUE(c.pass);
}

TEST(MaxDisplacement, BoundExamples) {
  auto c = max_displacement_bound_check(1, 10, 0, 10000, RngStream(16));
  EXPECT_NEAR(c.bound, std::exp(-20.0 / 8), 1e-12);
  EXPECT_TRUE(c.pass);
  auto d = max_displacement_bound_check(2, 10, 5, 10000, RngStream(17));
  EXPECT_NEAR(d.bound, std::exp(-45.0 / 8), 1e-12);
  EXPECT_TRUE(d.pass);
  EXPECT_THROW(max_displacement_bound_check(0, 10, 0, 10, RngStream(1)), ParameterError);
}

TEST(Replay, SameSeedSameState) {
  RngStream r0(18);
  auto s = sample_stationary({Model::SEP, 0.4, 1.0}, LatticeWindow{100}, r0);
  RngStream a(19), b(19);
  EXPECT_EQ(evolve_sep(s, 1.0, 25.0, a).slots(), evolve_sep(s, 1.0, 25.0, b).slots());
}

TEST(EdgeClock, ReplayAndGaps) {
  EdgeClockStream a(77, 5, 0.5), b(77, 5, 0.5);
  std::vector<double> gaps;
  double prev = 0;
  for (int i = 0; i < 20000; ++i) {
    double t = a.next();
    ASSERT_EQ(t, b.next());
    ASSERT_GT(t, prev);
    gaps.push_back(t - prev);
    prev = t;
  }
  auto ks = ks_one_sample(gaps, [](double x) { return 1 - std::exp(-0.5 * x); });
  EXPECT_GT(ks.p_value, 1e-3);
  // Restarting mid-way gives the tail of the same sequence.
  EdgeClockStream c(77, 5, 0.5, 100.5);
  EdgeClockStream d(77, 5, 0.5);
  double x;
  while ((x = d.next()) <= 100.5) {
  }
  EXPECT_EQ(c.next(), x);
}

TEST(EdgeClock, KeyedEvolutionIsPiecewiseConsistent) {
  RngStream r0(20);
  auto s = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{40}, r0);
  auto a = s, b = s;
  advance_sep_keyed(a, 1.0, 7.5, 123);
  advance_sep_keyed(b, 1.0, 3.25, 123);
  advance_sep_keyed(b, 1.0, 4.25, 123);
  EXPECT_EQ(a.slots(), b.slots());
  EXPECT_EQ(a.total(), s.total());
}

TEST(Invariants, ExclusionAndConservation) {
  RngStream r(21);
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_stationary({Model::SEP, 0.45, 1.0}, LatticeWindow{30}, r);
    auto n0 = s.total();
    for (int k = 0; k < 5; ++k) {
      advance_sep(s, 2.0, 0.7, r);
      ASSERT_EQ(s.total(), n0);
      for (auto v : s.slots()) ASSERT_LE(v, 1u);
    }
  }
}

// Interval counts of the event-driven interchange engine against the
// particle-clock rejection oracle from a non-stationary start.
TEST(OracleEquivalence, IntervalCounts) {
  EnvState s(Model::SEP, LatticeWindow{25});  // 51 sites
  for (int64_t x = -5; x <= 12; ++x) s.set(x, 1);
  for (double t : {1.0, 10.0}) {
    RngStream a(derive_key(22, {uint64_t(t)})), b(derive_key(23, {uint64_t(t)}));
    std::vector<int64_t> e1, o1, e2, o2;
    for (int i = 0; i < 10000; ++i) {
      auto x = evolve_sep(s, 1.0, t, a);
      auto y = oracle::rejection_sep(s, 1.0, t, b);
      e1.push_back(interval_count(x, 10, 19).count);
      o1.push_back(interval_count(y, 10, 19).count);
      e2.push_back(interval_count(x, -12, -3).count);
      o2.push_back(interval_count(y, -12, -3).count);
    }
    EXPECT_GT(two_sample_chi_square(e1, o1).p_value, 1e-3) << "t=" << t;
    EXPECT_GT(two_sample_chi_square(e2, o2).p_value, 1e-3) << "t=" << t;
  }
}
