#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "driftlab/finite_range.hpp"
#include "driftlab/parallel.hpp"
#include "driftlab/stats.hpp"
#include "driftlab/walk.hpp"

namespace driftlab {

// Model and walk parameters shared by all estimators; rho is per call.
struct ModelSpec {
  Model model = Model::SEP;
  double nu = 1.0;
  WalkParams walk;
  WindowOptions window;
  bool boundary_mode = false;

  RangeLParams at(double rho, int64_t L = 0) const {
    return {EnvParams{model, rho, nu, boundary_mode}, walk, L, window};
  }
};

// ---------------------- exit problems ----------------------

enum class ExitSide { Lower, Upper, Neither };

struct ExitRun {
  ExitSide side = ExitSide::Neither;
  int64_t time = 0;
  Trajectory path;
};

// Annealed walk from (0, 0) until it first hits `lower` or `upper`, or the cap.
inline ExitRun run_until_exit(const ModelSpec& m, double rho, int64_t lower, int64_t upper, int64_t cap,
                              uint64_t seed, bool record = false) {
  if (!(lower < 0 && upper > 0)) throw ParameterError("exit levels must straddle 0");
  auto p = m.at(rho);
  p.validate();
  WindowPlan plan = plan_window(cap, m.nu, m.window);
  Environment env(m.model, m.nu, {rho}, plan, env_seed_of(seed), 0, m.boundary_mode);
  ArrowSource arrows(arrow_seed_of(seed));
  std::vector<Walker> ws{{0, 0}};
  ExitRun r;
  r.path.start = {0, 0};
  int64_t prev = 0;
  drive_walkers(env, ws, cap, arrows, m.walk, [&](int64_t k, const std::vector<int64_t>& xs) {
    if (record && k > 0) r.path.steps.push_back(int8_t(xs[0] - prev));
    prev = xs[0];
    r.time = k;
    if (xs[0] == lower) r.side = ExitSide::Lower;
    if (xs[0] == upper) r.side = ExitSide::Upper;
    return r.side == ExitSide::Neither;
  });
  return r;
}

struct ProbabilityEstimate {
  EstimateWithCI est;       // Wilson interval
  int64_t unresolved = 0;   // neither level hit within the cap (counted as failure)
  int64_t cap = 0;
};

inline int64_t default_exit_cap(int64_t n) { return 100 * n * n; }

// theta_n = P(H_n < H_{-1}).
inline ProbabilityEstimate estimate_theta_n(const ModelSpec& m, double rho, int64_t n, int64_t reps,
                                            uint64_t seed, int threads = 0) {
  if (n < 1 || reps < 2) throw ParameterError("estimate_theta_n needs n >= 1, reps >= 2");
  int64_t cap = default_exit_cap(n);
  auto sides = parallel_map(size_t(reps), threads, [&](size_t i) {
    return run_until_exit(m, rho, -1, n, cap, replication_seed(seed, int64_t(i))).side;
  });
  ProbabilityEstimate r;
  r.cap = cap;
  int64_t k = 0;
  for (auto s : sides) {
    k += s == ExitSide::Upper;
    r.unresolved += s == ExitSide::Neither;
  }
  r.est = wilson_ci(k, reps);
  r.est.seed = seed;
  r.est.horizon = cap;
  return r;
}

// Back-tracking probability P(H_{-n} < H_1).
inline ProbabilityEstimate estimate_backtracking(const ModelSpec& m, double rho, int64_t n, int64_t reps,
                                                 uint64_t seed, int threads = 0) {
  if (n < 1 || reps < 2) throw ParameterError("estimate_backtracking needs n >= 1, reps >= 2");
  int64_t cap = default_exit_cap(n);
  auto sides = parallel_map(size_t(reps), threads, [&](size_t i) {
    return run_until_exit(m, rho, -n, 1, cap, replication_seed(seed, int64_t(i))).side;
  });
  ProbabilityEstimate r;
  r.cap = cap;
  int64_t k = 0;
  for (auto s : sides) {
    k += s == ExitSide::Lower;
    r.unresolved += s == ExitSide::Neither;
  }
  r.est = wilson_ci(k, reps);
  r.est.seed = seed;
  r.est.horizon = cap;
  return r;
}

struct ThetaProfile {
  std::vector<int64_t> levels;
  std::vector<ProbabilityEstimate> estimates;
  int64_t nesting_violations = 0;  // replications with 1{H_a < H_-1} < 1{H_b < H_-1}, a < b
};

// theta_n for several n on shared replications. Each indicator is read off
// the hitting times of one recorded trajectory.
inline ThetaProfile theta_profile(const ModelSpec& m, double rho, std::vector<int64_t> levels, int64_t reps,
                                  uint64_t seed, int threads = 0) {
  if (levels.empty() || reps < 2) throw ParameterError("theta_profile needs levels and reps >= 2");
  std::sort(levels.begin(), levels.end());
  if (levels.front() < 1) throw ParameterError("theta_profile levels must be >= 1");
  int64_t top = levels.back(), cap = default_exit_cap(top);
  auto rows = parallel_map(size_t(reps), threads, [&](size_t i) {
    auto run = run_until_exit(m, rho, -1, top, cap, replication_seed(seed, int64_t(i)), true);
    auto h = hitting_times(run.path);
    auto hm1 = h(-1);
    std::vector<int> ind;
    std::vector<int> unres;
    for (auto n : levels) {
      auto hn = h(n);
      ind.push_back(hn && (!hm1 || *hn < *hm1));
      unres.push_back(!hn && !hm1);
    }
    ind.insert(ind.end(), unres.begin(), unres.end());
    return ind;
  });
  ThetaProfile t;
  t.levels = levels;
  size_t L = levels.size();
  for (size_t j = 0; j < L; ++j) {
    int64_t k = 0, u = 0;
    for (auto& r : rows) k += r[j], u += r[L + j];
    ProbabilityEstimate pe;
    pe.est = wilson_ci(k, reps);
    pe.est.seed = seed;
    pe.est.horizon = cap;
    pe.unresolved = u;
    pe.cap = cap;
    t.estimates.push_back(pe);
  }
  for (auto& r : rows)
    for (size_t j = 0; j + 1 < L; ++j) t.nesting_violations += r[j] < r[j + 1];
  return t;
}

// ---------------------- speeds ----------------------

inline EstimateWithCI estimate_speed(const ModelSpec& m, double rho, int64_t n, int64_t reps, uint64_t seed,
                                     int threads = 0, int64_t first_rep = 0) {
  if (n < 1 || reps < 2) throw ParameterError("estimate_speed needs n >= 1, reps >= 2");
  auto p = m.at(rho);
  auto v = parallel_map(size_t(reps), threads, [&](size_t i) {
    auto r = run_layers(p, {rho}, n, replication_seed(seed, first_rep + int64_t(i)));
    return double(r.ends[0]) / double(n);
  });
  auto e = mean_ci(v);
  e.seed = seed;
  e.horizon = n;
  return e;
}

struct SpeedScan {
  std::vector<double> rhos;
  std::vector<EstimateWithCI> estimates;
  std::vector<EstimateWithCI> paired_differences;  // v(rho_{i+1}) - v(rho_i), per replication
  int64_t order_violations = 0;                    // over all replications and times
  std::vector<std::vector<double>> samples;        // X_n / n per [rho][rep]
};

inline SpeedScan monotone_speed_scan(const ModelSpec& m, const std::vector<double>& rhos, int64_t n,
                                     int64_t reps, uint64_t seed, int threads = 0) {
  if (n < 1 || reps < 2) throw ParameterError("monotone_speed_scan needs n >= 1, reps >= 2");
  for (size_t i = 1; i < rhos.size(); ++i)
    if (rhos[i] < rhos[i - 1]) throw ParameterError("densities must be nondecreasing");
  auto p = m.at(rhos.empty() ? 0.5 : rhos[0]);
  auto runs = parallel_map(size_t(reps), threads, [&](size_t i) {
    return run_layers(p, rhos, n, replication_seed(seed, int64_t(i)));
  });
  SpeedScan s;
  s.rhos = rhos;
  s.samples.assign(rhos.size(), {});
  for (auto& r : runs) {
    s.order_violations += r.order_violations;
    for (size_t j = 0; j < rhos.size(); ++j) s.samples[j].push_back(double(r.ends[j]) / double(n));
  }
  for (size_t j = 0; j < rhos.size(); ++j) {
    auto e = mean_ci(s.samples[j]);
    e.seed = seed;
    e.horizon = n;
    s.estimates.push_back(e);
  }
  for (size_t j = 0; j + 1 < rhos.size(); ++j) {
    std::vector<double> d;
    for (int64_t i = 0; i < reps; ++i) d.push_back(s.samples[j + 1][size_t(i)] - s.samples[j][size_t(i)]);
    auto e = mean_ci(d, 0.95, "paired");
    e.seed = seed;
    e.horizon = n;
    s.paired_differences.push_back(e);
  }
  return s;
}

// ---------------------- critical density ----------------------

enum class SpeedSign { Negative, Positive, Unresolved };

inline const char* sign_name(SpeedSign s) {
  return s == SpeedSign::Negative ? "negative" : s == SpeedSign::Positive ? "positive" : "unresolved";
}

struct Probe {
  double rho = 0;
  SpeedSign sign = SpeedSign::Unresolved;
  EstimateWithCI est;
};

struct RhoCOptions {
  double lo = 0.05, hi = 0.95;    // initial probes
  int64_t first_batch = 8;        // replications before the first sign test
  int64_t max_reps_per_probe = 256;
  int64_t max_probes = 24;
  double z = 3.0;                 // sign resolved when |mean| >= z se
};

enum class RhoCVerdict { Bracket, AllPositive, AllNegative };

inline const char* verdict_name(RhoCVerdict v) {
  return v == RhoCVerdict::Bracket ? "bracket" : v == RhoCVerdict::AllPositive ? "no-sign-change-positive"
                                                                                : "no-sign-change-negative";
}

struct RhoCBracket {
  RhoCVerdict verdict = RhoCVerdict::Bracket;
  double lo = 0, hi = 1;
  double width() const { return hi - lo; }
  bool reached_tol = false;
  bool budget_exhausted = false;  // stopped before reaching tol
  Probe lo_probe, hi_probe;       // evidence
  std::vector<Probe> probes;      // in evaluation order
};

// Sequential sampling at one density: batches double until the sign of the
// speed is resolved at z standard errors or the per-probe budget is spent.
// Replication i uses the same seed at every density.
inline Probe probe_speed(const ModelSpec& m, double rho, int64_t n, uint64_t seed, const RhoCOptions& o,
                         int threads = 0) {
  auto p = m.at(rho);
  std::vector<double> v;
  int64_t batch = o.first_batch;
  Probe pr;
  pr.rho = rho;
  for (;;) {
    int64_t start = int64_t(v.size());
    int64_t take = std::min(batch, o.max_reps_per_probe - start);
    auto more = parallel_map(size_t(take), threads, [&](size_t i) {
      auto r = run_layers(p, {rho}, n, replication_seed(seed, start + int64_t(i)));
      return double(r.ends[0]) / double(n);
    });
    v.insert(v.end(), more.begin(), more.end());
    pr.est = mean_ci(v);
    pr.est.seed = seed;
    pr.est.horizon = n;
    if (pr.est.se > 0 && pr.est.mean >= o.z * pr.est.se) pr.sign = SpeedSign::Positive;
    if (pr.est.se > 0 && pr.est.mean <= -o.z * pr.est.se) pr.sign = SpeedSign::Negative;
    // A zero-variance sample (frozen limits) has an exact sign.
    if (pr.est.se == 0 && pr.est.mean != 0) pr.sign = pr.est.mean > 0 ? SpeedSign::Positive : SpeedSign::Negative;
    if (pr.sign != SpeedSign::Unresolved || int64_t(v.size()) >= o.max_reps_per_probe) return pr;
    batch = int64_t(v.size());
  }
}

// Bisection for the sign change of v. An unresolved midpoint is bypassed by
// probing the two quarter points; the bracket then shrinks around it.
inline RhoCBracket estimate_rho_c(const ModelSpec& m, int64_t n, double tol, uint64_t seed,
                                  const RhoCOptions& o = {}, int threads = 0) {
  if (tol < 1e-3) throw ParameterError("estimate_rho_c needs tol >= 1e-3");
  if (!(o.lo < o.hi)) throw ParameterError("estimate_rho_c needs lo < hi");
  RhoCBracket b;
  std::map<double, Probe> cache;
  auto probe = [&](double rho) -> const Probe& {
    // Bisection points are dyadic in the initial range; snap them so that
    // a revisited point hits the cache.
    rho = std::round(rho * 1e9) / 1e9;
    auto it = cache.find(rho);
    if (it != cache.end()) return it->second;
    auto pr = probe_speed(m, rho, n, derive_key(seed, {tag::probe}), o, threads);
    b.probes.push_back(pr);
    return cache.emplace(rho, pr).first->second;
  };
  Probe plo = probe(o.lo), phi = probe(o.hi);
  b.lo = o.lo;
  b.hi = o.hi;
  b.lo_probe = plo;
  b.hi_probe = phi;
  if (plo.sign == SpeedSign::Positive) {
    b.verdict = RhoCVerdict::AllPositive;
    return b;
  }
  if (phi.sign == SpeedSign::Negative) {
    b.verdict = RhoCVerdict::AllNegative;
    return b;
  }
  if (plo.sign != SpeedSign::Negative || phi.sign != SpeedSign::Positive) {
    // An unresolved end probe: the sign change sits at the edge of the range.
    b.budget_exhausted = true;
    return b;
  }
  while (b.hi - b.lo > tol) {
    if (int64_t(b.probes.size()) >= o.max_probes) {
      b.budget_exhausted = true;
      break;
    }
    double w = b.hi - b.lo, mid = b.lo + w / 2;
    const Probe& pm = probe(mid);
    if (pm.sign == SpeedSign::Negative) {
      b.lo = pm.rho;
      b.lo_probe = pm;
      continue;
    }
    if (pm.sign == SpeedSign::Positive) {
      b.hi = pm.rho;
      b.hi_probe = pm;
      continue;
    }
    bool moved = false;
    Probe q1 = probe(mid - w / 4);
    if (q1.sign == SpeedSign::Positive) {
      b.hi = q1.rho;
      b.hi_probe = q1;
      continue;
    }
    Probe q3 = probe(mid + w / 4);
    if (q3.sign == SpeedSign::Negative) {
      b.lo = q3.rho;
      b.lo_probe = q3;
      continue;
    }
    if (q1.sign == SpeedSign::Negative) {
      b.lo = q1.rho;
      b.lo_probe = q1;
      moved = true;
    }
    if (q3.sign == SpeedSign::Positive) {
      b.hi = q3.rho;
      b.hi_probe = q3;
      moved = true;
    }
    if (!moved) {
      b.budget_exhausted = true;
      break;
    }
  }
  b.reached_tol = b.hi - b.lo <= tol;
  return b;
}

}  // namespace driftlab
