#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

namespace driftlab {

struct EstimateWithCI {
  double mean = 0;
  double se = 0;
  double lo = 0;
  double hi = 0;
  double level = 0.95;
  int64_t reps = 0;
  uint64_t seed = 0;
  int64_t horizon = 0;
  std::string method;
};

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double normal_sf(double z) {
  return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), z));
}

inline double sample_mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = sample_mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

// Batch means: split in order into at most max_batches contiguous batches.
// With independent replications this reduces to the usual standard error.
inline double batch_means_se(const std::vector<double>& v, int max_batches = 32) {
  size_t n = v.size();
  if (n < 2) return 0;
  size_t b = std::min<size_t>(size_t(max_batches), n);
  size_t per = n / b;
  std::vector<double> means;
  for (size_t i = 0; i < b; ++i) {
    size_t s = i * per, e = (i + 1 == b) ? n : s + per;
    double acc = 0;
    for (size_t j = s; j < e; ++j) acc += v[j];
    means.push_back(acc / double(e - s));
  }
  if (per * b == n) return std::sqrt(sample_var(means) / double(b));
  // Unequal last batch: fall back to the plain estimate.
  return std::sqrt(sample_var(v) / double(n));
}

inline EstimateWithCI mean_ci(const std::vector<double>& v, double level = 0.95,
                              std::string method = "batch-means") {
  EstimateWithCI e;
  e.mean = sample_mean(v);
  e.se = batch_means_se(v);
  double z = normal_quantile(0.5 + level / 2);
  e.lo = e.mean - z * e.se;
  e.hi = e.mean + z * e.se;
  e.level = level;
  e.reps = int64_t(v.size());
  e.method = std::move(method);
  return e;
}

// Wilson score interval for k successes out of n.
inline EstimateWithCI wilson_ci(int64_t k, int64_t n, double level = 0.95) {
  EstimateWithCI e;
  e.reps = n;
  e.level = level;
  e.method = "wilson";
  if (n <= 0) return e;
  double p = double(k) / double(n);
  double z = normal_quantile(0.5 + level / 2);
  double z2 = z * z;
  double den = 1 + z2 / double(n);
  double c = (p + z2 / (2.0 * double(n))) / den;
  double h = z * std::sqrt(p * (1 - p) / double(n) + z2 / (4.0 * double(n) * double(n))) / den;
  e.mean = p;
  e.se = std::sqrt(p * (1 - p) / double(n));
  e.lo = std::max(0.0, c - h);
  e.hi = std::min(1.0, c + h);
  return e;
}

// ---------------------- hypothesis tests ----------------------

struct TestResult {
  double statistic = 0;
  double df = 0;
  double p_value = 1;
};

inline double chi2_sf(double x, double df) {
  if (df <= 0) return 1;
  if (x <= 0) return 1;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

// Goodness of fit of integer-valued data against a pmf. Cells with small
// expectation are pooled from the tails until each has >= min_expected.
template <class Pmf>
TestResult chi_square_gof(const std::map<int64_t, int64_t>& hist, Pmf pmf, int64_t support_lo,
                          int64_t support_hi, double min_expected = 5.0) {
  int64_t n = 0;
  for (auto& [k, c] : hist) n += c;
  std::vector<double> exp_cells, obs_cells;
  double e_acc = 0, o_acc = 0, p_used = 0;
  for (int64_t k = support_lo; k <= support_hi; ++k) {
    double p = pmf(k);
    p_used += p;
    e_acc += p * double(n);
    auto it = hist.find(k);
    o_acc += it == hist.end() ? 0.0 : double(it->second);
    if (e_acc >= min_expected) {
      exp_cells.push_back(e_acc);
      obs_cells.push_back(o_acc);
      e_acc = o_acc = 0;
    }
  }
  // Remaining tail mass and any observations outside the enumerated support.
  double tail_p = std::max(0.0, 1.0 - p_used);
  e_acc += tail_p * double(n);
  for (auto& [k, c] : hist)
    if (k < support_lo || k > support_hi) o_acc += double(c);
  if (e_acc > 0 || o_acc > 0) {
    if (!exp_cells.empty() && e_acc < min_expected) {
      exp_cells.back() += e_acc;
      obs_cells.back() += o_acc;
    } else {
      exp_cells.push_back(e_acc);
      obs_cells.push_back(o_acc);
    }
  }
  TestResult r;
  for (size_t i = 0; i < exp_cells.size(); ++i) {
    double d = obs_cells[i] - exp_cells[i];
    if (exp_cells[i] > 0) {
      r.statistic += d * d / exp_cells[i];
    } else if (obs_cells[i] > 0) {
      r.statistic = std::numeric_limits<double>::infinity();
    }
  }
  r.df = double(exp_cells.size()) - 1;
  r.p_value = std::isinf(r.statistic) ? 0.0 : chi2_sf(r.statistic, r.df);
  return r;
}

// Two-sample chi-square homogeneity test on integer-valued samples; cells with
// small pooled counts are merged left to right.
inline TestResult two_sample_chi_square(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                        double min_expected = 5.0) {
  std::map<int64_t, std::pair<double, double>> cells;
  for (auto x : a) cells[x].first += 1;
  for (auto x : b) cells[x].second += 1;
  double na = double(a.size()), nb = double(b.size()), n = na + nb;
  std::vector<std::pair<double, double>> merged;
  std::pair<double, double> acc{0, 0};
  for (auto& [k, c] : cells) {
    acc.first += c.first;
    acc.second += c.second;
    double tot = acc.first + acc.second;
    if (tot * std::min(na, nb) / n >= min_expected) {
      merged.push_back(acc);
      acc = {0, 0};
    }
  }
  if (acc.first + acc.second > 0) {
    if (merged.empty())
      merged.push_back(acc);
    else {
      merged.back().first += acc.first;
      merged.back().second += acc.second;
    }
  }
  TestResult r;
  for (auto& [oa, ob] : merged) {
    double tot = oa + ob;
    double ea = tot * na / n, eb = tot * nb / n;
    r.statistic += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
  }
  r.df = double(merged.size()) - 1;
  r.p_value = merged.size() < 2 ? 1.0 : chi2_sf(r.statistic, r.df);
  return r;
}

// Asymptotic Kolmogorov survival function with the Stephens correction.
inline double kolmogorov_sf(double d, double n) {
  double en = std::sqrt(n);
  double lam = (en + 0.12 + 0.11 / en) * d;
  if (lam < 0.2) return 1.0;
  double s = 0, sign = 1;
  for (int k = 1; k <= 200; ++k) {
    double term = std::exp(-2.0 * k * k * lam * lam);
    s += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2 * s, 0.0, 1.0);
}

template <class Cdf>
TestResult ks_one_sample(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  double n = double(x.size()), d = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double f = cdf(x[i]);
    d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
  }
  return {d, 0, kolmogorov_sf(d, n)};
}

inline TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0, na = double(a.size()), nb = double(b.size());
  while (i < a.size() && j < b.size()) {
    double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  return {d, 0, kolmogorov_sf(d, na * nb / (na + nb))};
}

// Two-sided z-test for equal means of independent samples.
inline TestResult two_sample_z(const std::vector<double>& a, const std::vector<double>& b) {
  double se = std::sqrt(sample_var(a) / double(a.size()) + sample_var(b) / double(b.size()));
  double z = se > 0 ? (sample_mean(a) - sample_mean(b)) / se : 0.0;
  return {z, 0, 2 * normal_sf(std::abs(z))};
}

inline double lag1_autocorrelation(const std::vector<double>& v) {
  if (v.size() < 3) return 0;
  double m = sample_mean(v), num = 0, den = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    den += (v[i] - m) * (v[i] - m);
    if (i + 1 < v.size()) num += (v[i] - m) * (v[i + 1] - m);
  }
  return den > 0 ? num / den : 0.0;
}

}  // namespace driftlab
