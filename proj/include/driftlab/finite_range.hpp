#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "driftlab/parallel.hpp"
#include "driftlab/stats.hpp"
#include "driftlab/walk.hpp"

namespace driftlab {

// L = 0 stands for L = infinity (no renewal).
struct RangeLParams {
  EnvParams env;
  WalkParams walk;
  int64_t L = 0;
  WindowOptions window;

  bool infinite() const { return L == 0; }
  void validate() const {
    env.validate();
    walk.validate();
    if (L < 0) throw ParameterError("L must be >= 1 or infinite");
  }
};

struct LayeredRun {
  std::vector<double> rhos;
  std::vector<Trajectory> paths;  // filled when recording
  std::vector<int64_t> ends;      // X_n per layer
  int64_t order_violations = 0;   // times where X^{rho_i} > X^{rho_{i+1}}
  EnvDiagnostics env;
  WindowPlan plan;
};

// Walks at several densities on sitewise-monotone coupled environments with
// shared arrows, all from (0, 0). rhos must be nondecreasing.
inline LayeredRun run_layers(const RangeLParams& p, const std::vector<double>& rhos, int64_t n,
                             uint64_t master_seed, bool record = false) {
  p.validate();
  if (rhos.empty()) throw ParameterError("run_layers needs a density");
  for (size_t i = 1; i < rhos.size(); ++i)
    if (rhos[i] < rhos[i - 1]) throw ParameterError("densities must be nondecreasing");
  LayeredRun r;
  r.rhos = rhos;
  r.plan = plan_window(std::max<int64_t>(n, 1), p.env.nu, p.window);
  Environment env(p.env.model, p.env.nu, rhos, r.plan, env_seed_of(master_seed), 0, p.env.boundary_mode);
  ArrowSource arrows(arrow_seed_of(master_seed));
  std::vector<Walker> ws;
  for (size_t i = 0; i < rhos.size(); ++i) ws.push_back({i, 0});
  if (record) {
    r.paths.resize(rhos.size());
    for (auto& t : r.paths) t.steps.reserve(size_t(n));
  }
  std::vector<int64_t> prev(rhos.size(), 0);
  drive_walkers(
      env, ws, n, arrows, p.walk,
      [&](int64_t k, const std::vector<int64_t>& xs) {
        for (size_t i = 0; i < xs.size(); ++i) {
          if (record && k > 0) r.paths[i].steps.push_back(int8_t(xs[i] - prev[i]));
          if (i + 1 < xs.size() && xs[i] > xs[i + 1]) r.order_violations++;
        }
        prev = xs;
        return true;
      },
      p.L);
  r.ends = prev;
  r.env = env.diagnostics();
  return r;
}

struct FiniteRangeRun {
  Trajectory path;
  std::vector<int64_t> blocks;  // X_{kL} - X_{(k-1)L}
  EnvDiagnostics env;
};

inline FiniteRangeRun run_finite_range(const RangeLParams& p, int64_t n, uint64_t seed) {
  if (n < 1) throw ParameterError("run_finite_range needs n >= 1");
  auto lr = run_layers(p, {p.env.rho}, n, seed, true);
  FiniteRangeRun r;
  r.path = std::move(lr.paths[0]);
  r.env = lr.env;
  if (!p.infinite()) {
    auto pos = r.path.positions();
    for (int64_t k = p.L; k <= n; k += p.L) r.blocks.push_back(pos[size_t(k)] - pos[size_t(k - p.L)]);
  }
  return r;
}

inline uint64_t replication_seed(uint64_t seed, int64_t i) {
  return derive_key(seed, {tag::replication, uint64_t(i)});
}

// v_L = E[X_L / L], one independent block per replication.
inline EstimateWithCI estimate_vL(const RangeLParams& p, int64_t reps, uint64_t seed, int threads = 0) {
  p.validate();
  if (p.infinite()) throw ParameterError("estimate_vL needs a finite L");
  if (reps < 2) throw ParameterError("estimate_vL needs reps >= 2");
  auto v = parallel_map(size_t(reps), threads, [&](size_t i) {
    auto r = run_layers(p, {p.env.rho}, p.L, replication_seed(seed, int64_t(i)));
    return double(r.ends[0]) / double(p.L);
  });
  auto e = mean_ci(v, 0.95, "iid-blocks");
  e.seed = seed;
  e.horizon = p.L;
  return e;
}

struct VLScan {
  std::vector<EstimateWithCI> estimates;
  int64_t order_violations = 0;  // per replication X_L ordering across rhos
};

// v_L at several densities on common seeds and coupled environments.
inline VLScan estimate_vL_scan(const RangeLParams& p, const std::vector<double>& rhos, int64_t reps,
                               uint64_t seed, int threads = 0) {
  p.validate();
  if (p.infinite()) throw ParameterError("estimate_vL_scan needs a finite L");
  auto runs = parallel_map(size_t(reps), threads, [&](size_t i) {
    return run_layers(p, rhos, p.L, replication_seed(seed, int64_t(i)));
  });
  VLScan s;
  for (size_t j = 0; j < rhos.size(); ++j) {
    std::vector<double> v;
    for (auto& r : runs) v.push_back(double(r.ends[j]) / double(p.L));
    auto e = mean_ci(v, 0.95, "iid-blocks");
    e.seed = seed;
    e.horizon = p.L;
    s.estimates.push_back(e);
  }
  for (auto& r : runs) s.order_violations += r.order_violations;
  return s;
}

struct RegenerationReport {
  double lag1 = 0;        // pooled lag-1 autocorrelation of block increments
  double lag1_se = 0;     // 1 / sqrt(pairs)
  int64_t pairs = 0;
  double var_ratio = 0;   // Var(X_{kL}) / Var(X_L)
  double var_ratio_target = 0;  // k
  int64_t reps = 0;
};

inline RegenerationReport regeneration_check(const RangeLParams& p, int64_t k_blocks, int64_t reps,
                                             uint64_t seed, int threads = 0) {
  p.validate();
  if (p.infinite() || k_blocks < 2 || reps < 2)
    throw ParameterError("regeneration_check needs finite L, k_blocks >= 2, reps >= 2");
  auto blocks = parallel_map(size_t(reps), threads, [&](size_t i) {
    return run_finite_range(p, k_blocks * p.L, replication_seed(seed, int64_t(i))).blocks;
  });
  RegenerationReport r;
  r.reps = reps;
  double m = 0, cnt = 0;
  for (auto& b : blocks)
    for (auto x : b) m += double(x), cnt += 1;
  m /= cnt;
  double num = 0, den = 0;
  for (auto& b : blocks) {
    for (size_t j = 0; j < b.size(); ++j) {
      den += (double(b[j]) - m) * (double(b[j]) - m);
      if (j + 1 < b.size()) {
        num += (double(b[j]) - m) * (double(b[j + 1]) - m);
        r.pairs++;
      }
    }
  }
  r.lag1 = den > 0 ? (num / double(r.pairs)) / (den / cnt) : 0.0;
  r.lag1_se = 1.0 / std::sqrt(double(r.pairs));
  std::vector<double> first, total;
  for (auto& b : blocks) {
    first.push_back(double(b[0]));
    double s = 0;
    for (auto x : b) s += double(x);
    total.push_back(s);
  }
  double v1 = sample_var(first);
  r.var_ratio = v1 > 0 ? sample_var(total) / v1 : 0.0;
  r.var_ratio_target = double(k_blocks);
  return r;
}

}  // namespace driftlab
