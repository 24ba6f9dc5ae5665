#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "driftlab/rng.hpp"
#include "driftlab/sep.hpp"
#include "driftlab/stats.hpp"

using namespace driftlab;

TEST(Philox, KnownAnswerZero) {
  auto r = Philox4x32::block({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(r, (Philox4x32::ctr_t{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
}

TEST(Philox, KnownAnswerAllOnes) {
  auto r = Philox4x32::block({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff});
  EXPECT_EQ(r, (Philox4x32::ctr_t{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
}

TEST(Philox, KnownAnswerPiDigits) {
  auto r = Philox4x32::block({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0});
  EXPECT_EQ(r, (Philox4x32::ctr_t{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(DeriveKey, DeterministicAndOrderSensitive) {
  EXPECT_EQ(derive_key(7, {1, 2}), derive_key(7, {1, 2}));
  EXPECT_NE(derive_key(7, {1, 2}), derive_key(7, {2, 1}));
  EXPECT_NE(derive_key(7, {1}), derive_key(8, {1}));
  EXPECT_NE(derive_key(7, {}), derive_key(7, {0}));
}

TEST(RngStream, ReplayAndSplit) {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
  RngStream s1 = RngStream(42).split(tag::replication, 3);
  RngStream s2 = RngStream(42).split(tag::replication, 3);
  RngStream s3 = RngStream(42).split(tag::replication, 4);
  EXPECT_EQ(s1(), s2());
  EXPECT_NE(s1(), s3());
  EXPECT_EQ(a.position(), 1000u);
}

TEST(RngStream, BelowIsUniform) {
  RngStream r(1);
  std::map<int64_t, int64_t> h;
  for (int i = 0; i < 700000; ++i) h[int64_t(r.below(7))]++;
  auto t = chi_square_gof(h, [](int64_t) { return 1.0 / 7; }, 0, 6);
  EXPECT_GT(t.p_value, 1e-3);
}

TEST(RngStream, ExponentialMean) {
  RngStream r(2);
  std::vector<double> v;
  for (int i = 0; i < 100000; ++i) v.push_back(r.exponential(2.0));
  auto ks = ks_one_sample(v, [](double x) { return 1 - std::exp(-2 * x); });
  EXPECT_GT(ks.p_value, 1e-3);
}

TEST(EdgePicker, UniformAndRange) {
  RngStream r(3);
  EdgePicker p(13);
  std::map<int64_t, int64_t> h;
  for (int i = 0; i < 1300000; ++i) {
    auto j = p(r);
    ASSERT_LT(j, 13u);
    h[int64_t(j)]++;
  }
  auto t = chi_square_gof(h, [](int64_t) { return 1.0 / 13; }, 0, 12);
  EXPECT_GT(t.p_value, 1e-3);
  EXPECT_THROW(EdgePicker(0), ParameterError);
  EXPECT_THROW(EdgePicker(uint64_t(1) << 32), ParameterError);
}

TEST(ArrowSource, Purity) {
  ArrowSource a(99), b(99), c(100);
  EXPECT_EQ(a.u(5, 7), b.u(5, 7));
  EXPECT_EQ(a.u(-5, 7), a.u(-5, 7));
  EXPECT_NE(a.u(5, 7), c.u(5, 7));
  EXPECT_NE(a.u(5, 7), a.u(7, 5));
  // Reading other points in between does not change a value.
  double before = a.u(0, 0);
  for (int i = 0; i < 100; ++i) a.u(i, i);
  EXPECT_EQ(before, a.u(0, 0));
}

TEST(ArrowSource, UniformityKolmogorovSmirnov) {
  ArrowSource a(2024);
  std::vector<double> v;
  v.reserve(1000000);
  for (int64_t n = 0; n < 1000; ++n)
    for (int64_t x = -n; x < 2000 - n; x += 2) v.push_back(a.u(x, n));
  ASSERT_EQ(v.size(), 1000000u);
  for (double u : v) ASSERT_TRUE(u >= 0 && u < 1);
  auto ks = ks_one_sample(v, [](double x) { return std::clamp(x, 0.0, 1.0); });
  EXPECT_GT(ks.p_value, 1e-3);
}

TEST(ArrowSource, AdjacentPointsUncorrelated) {
  ArrowSource a(5);
  std::vector<double> sx, sn;
  double mx = 0, mn = 0;
  const int64_t N = 200000;
  for (int64_t i = 0; i < N; ++i) {
    double u0 = a.u(2 * i, 0);
    mx += (u0 - 0.5) * (a.u(2 * i + 2, 0) - 0.5);
    mn += (u0 - 0.5) * (a.u(2 * i + 1, 1) - 0.5);
  }
  // Each product has variance 1/144, so the normalized sums are ~ N(0,1).
  double zx = mx / std::sqrt(double(N) / 144.0);
  double zn = mn / std::sqrt(double(N) / 144.0);
  EXPECT_LT(std::abs(zx), 4.0);
  EXPECT_LT(std::abs(zn), 4.0);
}
