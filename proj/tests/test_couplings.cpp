#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <vector>

#include "driftlab/couplings.hpp"
#include "driftlab/finite_range.hpp"
#include "driftlab/stats.hpp"

using namespace driftlab;

namespace {

const double kGolden = 1 / std::sqrt(2.0);

// Sturmian high at 1/sqrt(2) and low at 0.2 with random phases: every short
// interval sits inside the covering bands for rho = 0.3, eps = 0.2, mesh >= 6.
std::pair<EnvState, EnvState> sturmian_pair(int64_t half, RngStream& r) {
  LatticeWindow w{half};
  auto hi = banded_configuration(Model::SEP, w, kGolden, r.uniform());
  auto lo = banded_configuration(Model::SEP, w, 0.2, r.uniform());
  return {std::move(hi), std::move(lo)};
}

// Same bands, with low replaced by low AND high on [-H1, H1] so that high
// dominates there.
std::pair<EnvState, EnvState> surgery_pair(int64_t half, int64_t H1, RngStream& r) {
  auto [hi, lo] = sturmian_pair(half, r);
  for (int64_t x = -H1; x <= H1; ++x) lo.set(x, lo.get(x) && hi.get(x));
  return {std::move(hi), std::move(lo)};
}

double proportion_se(double p, int n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace

// ---------------------- drift ----------------------

TEST(Drift, PcrwAlwaysSucceeds) {
  RngStream r(1);
  int ok = 0;
  for (int i = 0; i < 200; ++i) {
    auto l = sample_stationary_layers(Model::PCRW, {0.5, 1.0}, LatticeWindow{300}, r);
    ok += drift_coupling(l[1], l[0], 1.0, 20, 200, 1, derive_key(2, {uint64_t(i)})).success("domination");
  }
  EXPECT_EQ(ok, 200);
}

TEST(Drift, LowEmptyAlwaysSucceeds) {
  RngStream r(3);
  for (int i = 0; i < 50; ++i) {
    auto hi = sample_stationary({Model::SEP, 0.5, 1.0}, LatticeWindow{300}, r);
    EnvState lo(Model::SEP, LatticeWindow{300});
    ASSERT_TRUE(drift_coupling(hi, lo, 1.0, 20, 200, 1, uint64_t(i)).success("domination"));
  }
}

TEST(Drift, SepFailureBound) {
  RngStream r(4);
  const int reps = 1000;
  int fail = 0;
  for (int i = 0; i < reps; ++i) {
    auto [hi, lo] = sample_local_domination(0.3, 0.6, 200, LatticeWindow{400}, r);
    fail += !drift_coupling(hi, lo, 1.0, 20, 200, 1, derive_key(5, {uint64_t(i)})).success("domination");
  }
  double bound = 20 * std::exp(-5.0);
  EXPECT_LE(double(fail) / reps, bound + 3 * proportion_se(bound, reps));
}

TEST(Drift, Preconditions) {
  RngStream r(6);
  auto [hi, lo] = sample_local_domination(0.3, 0.6, 50, LatticeWindow{100}, r);
  EXPECT_THROW(drift_coupling(lo, hi, 1.0, 5, 50, 1, 1), ParameterError);
  EXPECT_THROW(drift_coupling(hi, lo, 1.0, 5, 200, 1, 1), ParameterError);
  EXPECT_THROW(drift_coupling(hi, lo, 1.0, 5, 50, 0, 1), ParameterError);
  EXPECT_THROW(sample_local_domination(0.6, 0.3, 50, LatticeWindow{100}, r), ParameterError);
}

TEST(Drift, MarginalsMatchDirectSimulation) {
  ProbeSpec probes{{2, 5, 10}, {{-10, 9}, {30, 49}}};
  RngStream r(7), d(8);
  std::vector<std::vector<int64_t>> cl(6), ch(6), dl(6), dh(6);
  for (int i = 0; i < 1000; ++i) {
    auto [hi, lo] = sample_local_domination(0.3, 0.6, 60, LatticeWindow{60}, r);
    auto rep = drift_coupling(hi, lo, 1.0, 10, 60, 1, derive_key(9, {uint64_t(i)}), probes);
    ASSERT_EQ(rep.marginals.times.size(), 3u);
    EnvState a = lo, b = hi;
    double prev = 0;
    for (size_t k = 0; k < 3; ++k) {
      advance_sep(a, 1.0, probes.times[k] - prev, d);
      advance_sep(b, 1.0, probes.times[k] - prev, d);
      prev = probes.times[k];
      for (size_t j = 0; j < 2; ++j) {
        auto [x, y] = probes.intervals[j];
        cl[2 * k + j].push_back(rep.marginals.low[k][j]);
        ch[2 * k + j].push_back(rep.marginals.high[k][j]);
        dl[2 * k + j].push_back(interval_count(a, x, y).count);
        dh[2 * k + j].push_back(interval_count(b, x, y).count);
      }
    }
  }
  for (size_t q = 0; q < 6; ++q) {
    EXPECT_GT(two_sample_chi_square(cl[q], dl[q]).p_value, 1e-3) << q;
    EXPECT_GT(two_sample_chi_square(ch[q], dh[q]).p_value, 1e-3) << q;
  }
}

// ---------------------- covering ----------------------

TEST(Paving, Examples) {
  using V = std::vector<std::pair<int64_t, int64_t>>;
  EXPECT_EQ(PairedSep::pave(0, 9, 4), (V{{0, 3}, {4, 7}, {8, 9}}));
  EXPECT_EQ(PairedSep::pave(0, 8, 4), (V{{0, 3}, {4, 5}, {6, 8}}));
  EXPECT_EQ(PairedSep::pave(0, 3, 4), (V{{0, 3}}));
  EXPECT_EQ(PairedSep::pave(0, 7, 4), (V{{0, 3}, {4, 7}}));
  EXPECT_TRUE(PairedSep::pave(5, 4, 4).empty());
}

TEST(Paving, ContiguousWithBoundedLengths) {
  RngStream r(10);
  for (int i = 0; i < 5000; ++i) {
    int64_t mesh = 2 + int64_t(r.below(30)), a = int64_t(r.below(100)) - 50;
    int64_t b = a + mesh + int64_t(r.below(500));
    auto p = PairedSep::pave(a, b, mesh);
    ASSERT_EQ(p.front().first, a);
    ASSERT_EQ(p.back().second, b);
    for (size_t k = 0; k < p.size(); ++k) {
      int64_t len = p[k].second - p[k].first + 1;
      ASSERT_GE(len, mesh / 2);
      ASSERT_LE(len, mesh);
      if (k > 0) {
        ASSERT_EQ(p[k].first, p[k - 1].second + 1);
      }
    }
  }
}

TEST(Matching, LeftmostToLeftmost) {
  LatticeWindow w{10};
  EnvState hi(Model::SEP, w), lo(Model::SEP, w);
  for (int64_t x : {0, 1, 2, 5}) hi.set(x, 1);
  for (int64_t x : {1, 3, 7}) lo.set(x, 1);
  PairedSep e(hi, lo, 1.0);
  auto m = e.match(0, 7, 4, 0, 7);
  EXPECT_EQ(m.paired, 1);
  using V = std::vector<std::pair<int64_t, int64_t>>;
  EXPECT_EQ(m.matches, (V{{3, 0}, {7, 5}}));
  EXPECT_EQ(m.unmatched_low, 0);
  EXPECT_EQ(m.max_separation, 3);
  EXPECT_EQ(m.injectivity_violations, 0);
  // Two free low particles against one free high particle in the same cell.
  EnvState h2(Model::SEP, w), l2(Model::SEP, w);
  for (int64_t x : {1, 2}) h2.set(x, 1);
  for (int64_t x : {0, 1, 3}) l2.set(x, 1);
  PairedSep f(h2, l2, 1.0);
  auto g = f.match(0, 3, 4, 0, 3);
  EXPECT_EQ(g.paired, 1);
  EXPECT_EQ(g.unmatched_low, 1);
  EXPECT_EQ(g.matches, (V{{0, 2}}));
}

TEST(Covering, LowEmptyAlwaysSucceeds) {
  RngStream r(11);
  for (int i = 0; i < 20; ++i) {
    auto hi = banded_configuration(Model::SEP, LatticeWindow{760}, kGolden, r.uniform());
    EnvState lo(Model::SEP, LatticeWindow{760});
    auto rep = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, uint64_t(i));
    ASSERT_TRUE(rep.success("domination"));
    ASSERT_EQ(rep.low.total(), 0);
  }
}

TEST(Covering, Refusals) {
  RngStream r(12);
  auto [hi, lo] = sturmian_pair(760, r);
  EXPECT_THROW(covering_coupling(hi, hi, 0.3, 0.2, 0.1, 1296, 700, 1), ParameterError);  // low band
  EXPECT_THROW(covering_coupling(hi, lo, 0.3, 0.0, 0.1, 1296, 700, 1), ParameterError);
  EXPECT_THROW(covering_coupling(hi, lo, 0.3, 0.2, 0.1, 15, 700, 1), ParameterError);    // mesh 1
  EXPECT_THROW(covering_coupling(hi, lo, 0.3, 0.2, 1.0, 1296, 700, 1), ParameterError);  // H <= 4 nu t
  EXPECT_THROW(covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 800, 1), ParameterError);  // window
  CoveringOptions o;
  o.stages = 7;
  EXPECT_THROW(covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, 1, o), ParameterError);
  o = {};
  o.refuse = false;
  EXPECT_FALSE(covering_coupling(hi, hi, 0.3, 0.2, 0.1, 1296, 700, 1, o).success("initial_band"));
}

TEST(Covering, PlanDefaults) {
  auto p = covering_plan(4096, {});
  EXPECT_EQ(p.mesh, 8);
  EXPECT_EQ(p.tau, 512);
  EXPECT_EQ(p.stages, 8);
  EXPECT_EQ(covering_plan(1295, {}).mesh, 5);
  EXPECT_EQ(covering_plan(1296, {}).mesh, 6);
}

TEST(Covering, PilotSuccess) {
  RngStream r(13);
  const int reps = 50;
  int ok = 0;
  for (int i = 0; i < reps; ++i) {
    auto [hi, lo] = sturmian_pair(6100, r);
    ok += covering_coupling(hi, lo, 0.3, 0.2, 0.25, 1296, 6000, derive_key(14, {uint64_t(i)}))
              .success("domination");
  }
  EXPECT_GE(double(ok) / reps, 0.9);
}

TEST(Covering, StageInvariants) {
  RngStream r(15);
  for (int i = 0; i < 50; ++i) {
    auto [hi, lo] = sturmian_pair(760, r);
    auto rep = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, derive_key(16, {uint64_t(i)}));
    ASSERT_EQ(rep.coalescence_violations, 0);
    ASSERT_EQ(rep.stages.size(), 6u);
    for (auto& s : rep.stages) {
      ASSERT_EQ(s.match.injectivity_violations, 0);
      ASSERT_LE(s.match.max_separation, 6);
    }
    ASSERT_EQ(rep.low.total(), lo.total());
    ASSERT_EQ(rep.high.total(), hi.total());
  }
}

TEST(Covering, ThinningIsFair) {
  RngStream r(17);
  double chi = 0, dof = 0;
  int64_t kept = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    auto [hi, lo] = sturmian_pair(760, r);
    auto rep = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, derive_key(18, {uint64_t(i)}));
    ASSERT_EQ(rep.thinning_total.size(), rep.thinning_retained.size());
    for (size_t k = 0; k < rep.thinning_total.size(); ++k) {
      double n = double(rep.thinning_total[k]), x = double(rep.thinning_retained[k]);
      chi += (x - n / 2) * (x - n / 2) / (n / 4);
      dof += 1;
      kept += rep.thinning_retained[k];
      total += rep.thinning_total[k];
    }
  }
  ASSERT_GT(dof, 1000);
  boost::math::chi_squared_distribution<double> c(dof);
  double p = boost::math::cdf(boost::math::complement(c, chi));
  EXPECT_GT(p, 1e-3);
  EXPECT_LT(p, 1 - 1e-3);
  double z = (double(kept) - double(total) / 2) / std::sqrt(double(total) / 4);
  EXPECT_LT(std::abs(z), 3.29);
}

TEST(Covering, MarginalsMatchDirectSimulation) {
  ProbeSpec probes{{432, 864, 1296}, {{-50, 49}, {300, 399}}};
  RngStream r(19), d(20);
  std::vector<std::vector<int64_t>> cl(6), ch(6), dl(6), dh(6);
  for (int i = 0; i < 1000; ++i) {
    auto [hi, lo] = sturmian_pair(760, r);
    CoveringOptions o;
    o.probes = probes;
    auto rep = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, derive_key(21, {uint64_t(i)}), o);
    ASSERT_EQ(rep.marginals.times.size(), 3u);
    EnvState a = lo, b = hi;
    double prev = 0;
    for (size_t k = 0; k < 3; ++k) {
      advance_sep(a, 0.1, probes.times[k] - prev, d);
      advance_sep(b, 0.1, probes.times[k] - prev, d);
      prev = probes.times[k];
      for (size_t j = 0; j < 2; ++j) {
        auto [x, y] = probes.intervals[j];
        cl[2 * k + j].push_back(rep.marginals.low[k][j]);
        ch[2 * k + j].push_back(rep.marginals.high[k][j]);
        dl[2 * k + j].push_back(interval_count(a, x, y).count);
        dh[2 * k + j].push_back(interval_count(b, x, y).count);
      }
    }
  }
  for (size_t q = 0; q < 6; ++q) {
    EXPECT_GT(two_sample_chi_square(cl[q], dl[q]).p_value, 1e-3) << q;
    EXPECT_GT(two_sample_chi_square(ch[q], dh[q]).p_value, 1e-3) << q;
  }
}

TEST(Covering, Deterministic) {
  RngStream r(22);
  auto [hi, lo] = sturmian_pair(760, r);
  auto a = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, 5);
  auto b = covering_coupling(hi, lo, 0.3, 0.2, 0.1, 1296, 700, 5);
  EXPECT_EQ(a.low.slots(), b.low.slots());
  EXPECT_EQ(a.high.slots(), b.high.slots());
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.thinning_retained, b.thinning_retained);
}

// ---------------------- surgery ----------------------

namespace {

const int64_t kH1 = 1200, kH2 = 2400, kT = 2592;
const double kNu = 0.1;

SurgeryOptions surgery_options() {
  SurgeryOptions o;
  o.mesh = 6;
  return o;
}

}  // namespace

TEST(Surgery, LowEmptyAlwaysSucceeds) {
  RngStream r(23);
  for (int i = 0; i < 5; ++i) {
    auto hi = banded_configuration(Model::SEP, LatticeWindow{2500}, kGolden, r.uniform());
    EnvState lo(Model::SEP, LatticeWindow{2500});
    auto rep = surgery_coupling(hi, lo, 0.3, 0.2, kNu, kH1, kH2, kT, uint64_t(i), surgery_options());
    EXPECT_TRUE(rep.success("inner"));
    EXPECT_TRUE(rep.success("outer"));
  }
}

TEST(Surgery, Preconditions) {
  RngStream r(24);
  auto [hi, lo] = sturmian_pair(2500, r);
  // Independent phases: high does not dominate on [-H1, H1].
  EXPECT_THROW(surgery_coupling(hi, lo, 0.3, 0.2, kNu, kH1, kH2, kT, 1, surgery_options()), ParameterError);
  auto [h2, l2] = surgery_pair(2500, kH1, r);
  EXPECT_THROW(surgery_coupling(h2, l2, 0.3, 0.2, kNu, kH2, kH1, kT, 1, surgery_options()), ParameterError);
  EXPECT_THROW(surgery_coupling(h2, l2, 0.3, 0.2, kNu, kH1, kH2, 2000, 1, surgery_options()), ParameterError);
  EXPECT_THROW(surgery_coupling(h2, h2, 0.3, 0.2, kNu, kH1, kH2, kT, 1, surgery_options()), ParameterError);
}

// The inner interval runs on shared clocks throughout, as in drift_coupling
// with k = 2; the two success frequencies must agree.
TEST(Surgery, InnerMatchesDrift) {
  RngStream r(25);
  const int reps = 40;
  int inner = 0, drift = 0, outer = 0, g1 = 0;
  for (int i = 0; i < reps; ++i) {
    auto [hi, lo] = surgery_pair(2500, kH1, r);
    auto rep = surgery_coupling(hi, lo, 0.3, 0.2, kNu, kH1, kH2, kT, derive_key(26, {uint64_t(i)}),
                                surgery_options());
    inner += rep.success("inner");
    outer += rep.success("outer");
    g1 += rep.success("G1");
    ASSERT_EQ(rep.coalescence_violations, 0);
    drift += drift_coupling(hi, lo, kNu, double(kT), kH1, 2, derive_key(27, {uint64_t(i)})).success("domination");
  }
  double pi = double(inner) / reps, pd = double(drift) / reps;
  double se = std::sqrt((pi * (1 - pi) + pd * (1 - pd)) / reps);
  EXPECT_LE(std::abs(pi - pd), 3 * se + 1e-12);
  EXPECT_GE(double(outer) / reps, 0.85);
  EXPECT_EQ(g1, reps);
}

// ---------------------- sprinkler ----------------------

namespace {

// low ~ Ber(rho) with low(0) = 0; high = low plus a particle at 0.
std::pair<EnvState, EnvState> sprinkler_pair(double rho, int64_t half, RngStream& r) {
  EnvState lo(Model::SEP, LatticeWindow{half});
  for (int64_t x = -half; x <= half; ++x) lo.set(x, x != 0 && r.uniform() < rho);
  EnvState hi = lo;
  hi.set(0, 1);
  return {std::move(hi), std::move(lo)};
}

}  // namespace

TEST(Sprinkler, DeltaFormula) {
  EXPECT_NEAR(sprinkler_delta(0.3, 1.0, 1), std::pow(1 / (2 * std::exp(1.0)), 7.8), 1e-18);
  EXPECT_LT(sprinkler_delta(0.3, 1.0, 2), sprinkler_delta(0.3, 1.0, 1));
}

TEST(Sprinkler, TargetFrequencyAboveBound) {
  RngStream r(28);
  const int reps = 10000;
  int hit = 0;
  for (int i = 0; i < reps; ++i) {
    auto [hi, lo] = sprinkler_pair(0.3, 60, r);
    auto rep = sprinkler_coupling(hi, lo, 0.3, 1.0, 1, 50, 1, derive_key(29, {uint64_t(i)}));
    hit += rep.success("target_0") || rep.success("target_1");
  }
  double p = double(hit) / reps, delta = sprinkler_delta(0.3, 1.0, 1);
  EXPECT_GE(p, 2 * delta - 3 * proportion_se(p, reps));
  EXPECT_GT(hit, 0);
}

// With low empty and one high particle at 0, the target at x is the event
// that a rate-nu continuous-time walk sits at x at time 1: e^{-nu} I_x(nu).
TEST(Sprinkler, LoneParticleWalkMarginal) {
  const int reps = 10000;
  int at0 = 0, at1 = 0;
  EnvState lo(Model::SEP, LatticeWindow{60}), hi(Model::SEP, LatticeWindow{60});
  hi.set(0, 1);
  for (int i = 0; i < reps; ++i) {
    auto rep = sprinkler_coupling(hi, lo, 0.3, 1.0, 1, 50, 1, derive_key(30, {uint64_t(i)}));
    at0 += rep.success("target_0");
    at1 += rep.success("target_1");
  }
  double q0 = std::exp(-1.0) * boost::math::cyl_bessel_i(0, 1.0);
  double q1 = std::exp(-1.0) * boost::math::cyl_bessel_i(1, 1.0);
  EXPECT_NEAR(double(at0) / reps, q0, 3 * proportion_se(q0, reps));
  EXPECT_NEAR(double(at1) / reps, q1, 3 * proportion_se(q1, reps));
}

TEST(Sprinkler, DominationWithinDriftBound) {
  RngStream r(31);
  const int reps = 1000;
  int fail = 0;
  for (int i = 0; i < reps; ++i) {
    auto [hi, lo] = sprinkler_pair(0.3, 400, r);
    // Outside [-H, H] the two layers are independent.
    for (int64_t x = -400; x <= 400; ++x)
      if (std::abs(x) > 200) {
        hi.set(x, r.uniform() < 0.6);
        lo.set(x, r.uniform() < 0.3);
      }
    fail += !sprinkler_coupling(hi, lo, 0.3, 1.0, 20, 200, 1, derive_key(32, {uint64_t(i)})).success("domination");
  }
  double bound = 20 * std::exp(-5.0);
  EXPECT_LE(double(fail) / reps, bound + 3 * proportion_se(bound, reps));
}

TEST(Sprinkler, Preconditions) {
  RngStream r(33);
  auto [hi, lo] = sprinkler_pair(0.3, 60, r);
  EXPECT_THROW(sprinkler_coupling(lo, lo, 0.3, 1.0, 1, 50, 1, 1), ParameterError);  // no surplus
  EXPECT_THROW(sprinkler_coupling(lo, hi, 0.3, 1.0, 1, 50, 1, 1), ParameterError);  // order
  EXPECT_THROW(sprinkler_coupling(hi, lo, 0.3, 1.0, 0, 50, 1, 1), ParameterError);
  EXPECT_THROW(sprinkler_coupling(hi, lo, 0.3, 1.0, 1, 70, 1, 1), ParameterError);
}

TEST(Sprinkler, Deterministic) {
  RngStream r(34);
  auto [hi, lo] = sprinkler_pair(0.3, 60, r);
  auto a = sprinkler_coupling(hi, lo, 0.3, 1.0, 3, 50, 1, 9);
  auto b = sprinkler_coupling(hi, lo, 0.3, 1.0, 3, 50, 1, 9);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.low.slots(), b.low.slots());
  EXPECT_EQ(a.high.slots(), b.high.slots());
}

// ---------------------- scale doubling ----------------------

TEST(ScaleCoupling, Validation) {
  ScaleCouplingParams p;
  p.eps = 0.9;
  EXPECT_THROW(sprinkled_scale_coupling(p, 1), ParameterError);
  p = {};
  p.f = 1;
  EXPECT_THROW(sprinkled_scale_coupling(p, 1), ParameterError);
  p = {};
  p.L = 20;
  p.f = 64;
  EXPECT_THROW(sprinkled_scale_coupling(p, 1), ParameterError);
}

TEST(ScaleCoupling, LargeGapIsRare) {
  const int reps = 200;
  int bad = 0;
  int64_t order = 0;
  for (int i = 0; i < reps; ++i) {
    auto res = sprinkled_scale_coupling({}, derive_key(35, {uint64_t(i)}));
    bad += res.min_gap <= -64;
    order += res.order_violations;
    ASSERT_EQ(res.traj1.length(), 4000);
    ASSERT_EQ(res.traj2.length(), 4000);
    ASSERT_FALSE(res.regime);
  }
  EXPECT_LT(double(bad) / reps, 0.05);
  EXPECT_EQ(order, 0);
}

TEST(ScaleCoupling, GoodEventGivesShiftedOrder) {
  ScaleCouplingParams p;
  p.L = 500;
  p.f = 512;
  const int reps = 100;
  int good = 0;
  std::vector<double> v1;
  for (int i = 0; i < reps; ++i) {
    auto res = sprinkled_scale_coupling(p, derive_key(36, {uint64_t(i)}));
    ASSERT_EQ(res.order_violations, 0);
    ASSERT_EQ(res.cover.coalescence_violations, 0);
    if (res.G) {
      ++good;
      ASSERT_EQ(res.shift_violations, 0);
      ASSERT_GE(res.min_gap, -2 * res.t);
    }
    v1.push_back(double(res.traj1.positions()[size_t(p.L)]) / double(p.L));
  }
  EXPECT_GT(good, reps / 2);

  // The first block of X1 is one block of the finite-range walk.
  RangeLParams fr;
  fr.env = {Model::SEP, p.rho, p.nu};
  fr.walk = p.walk;
  fr.L = p.L;
  auto e = estimate_vL(fr, 400, 37);
  double se = std::sqrt(e.se * e.se + sample_var(v1) / reps);
  EXPECT_LE(std::abs(sample_mean(v1) - e.mean), 2 * se);
}

TEST(ScaleCoupling, Deterministic) {
  ScaleCouplingParams p;
  p.L = 200;
  p.f = 128;
  auto a = sprinkled_scale_coupling(p, 38);
  auto b = sprinkled_scale_coupling(p, 38);
  EXPECT_EQ(a.traj1.steps, b.traj1.steps);
  EXPECT_EQ(a.traj2.steps, b.traj2.steps);
  EXPECT_EQ(a.G, b.G);
  EXPECT_EQ(a.min_gap, b.min_gap);
}
