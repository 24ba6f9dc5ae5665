#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driftlab/env.hpp"
#include "driftlab/pcrw.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/sep.hpp"

namespace driftlab {

struct SpaceTimePoint {
  int64_t x = 0;
  int64_t n = 0;
  bool in_lattice() const { return n >= 0 && ((x + n) % 2 + 2) % 2 == 0; }
};

struct WalkParams {
  double p_bullet = 0.8;  // right-jump probability on an occupied site
  double p_circ = 0.2;    // right-jump probability on an empty site

  void validate() const {
    if (!(p_bullet > 0 && p_bullet < 1) || !(p_circ > 0 && p_circ < 1))
      throw ParameterError("p_bullet and p_circ must lie in (0,1)");
    if (!(p_bullet > p_circ)) throw ParameterError("need p_bullet > p_circ");
  }
};

inline int arrow(uint32_t occupancy, double u, const WalkParams& w) {
  double thr = occupancy > 0 ? w.p_bullet : w.p_circ;
  return u <= thr ? 1 : -1;
}

struct Trajectory {
  SpaceTimePoint start;
  std::vector<int8_t> steps;

  int64_t length() const { return int64_t(steps.size()); }
  int64_t position(int64_t k) const {
    int64_t x = start.x;
    for (int64_t i = 0; i < k; ++i) x += steps[size_t(i)];
    return x;
  }
  int64_t end() const { return position(length()); }
  std::vector<int64_t> positions() const {
    std::vector<int64_t> p{start.x};
    p.reserve(steps.size() + 1);
    for (auto s : steps) p.push_back(p.back() + s);
    return p;
  }
};

// First hitting times within the horizon of a trajectory.
struct HittingTimes {
  int64_t horizon = 0;
  std::map<int64_t, int64_t> first;

  // nullopt means "not hit within the horizon".
  std::optional<int64_t> operator()(int64_t level) const {
    auto it = first.find(level);
    if (it == first.end()) return std::nullopt;
    return it->second;
  }
};

inline HittingTimes hitting_times(const Trajectory& tr) {
  HittingTimes h;
  h.horizon = tr.length();
  auto p = tr.positions();
  for (size_t k = 0; k < p.size(); ++k) h.first.emplace(p[k], int64_t(k));
  return h;
}

// ---------------------- window sizing ----------------------

enum class WindowPolicy { Fixed, Tracking, Auto };

inline const char* policy_name(WindowPolicy p) {
  return p == WindowPolicy::Fixed ? "fixed" : p == WindowPolicy::Tracking ? "tracking" : "auto";
}

// Fixed periodic window for an n-step walk.
inline int64_t compute_window(int64_t n, double nu, double safety) {
  if (n < 1) throw ParameterError("compute_window needs n >= 1");
  return n + int64_t(std::ceil(safety * (1 + nu) * double(n))) + 64;
}

// Half-width of a window that follows the walk: a multiple of the diffusive
// spread sqrt((1+nu) n) of particle contents over the horizon.
inline int64_t tracking_half_width(int64_t n, double nu, double safety) {
  if (n < 1) throw ParameterError("tracking_half_width needs n >= 1");
  return 64 + int64_t(std::ceil(safety * std::sqrt((1 + nu) * double(n))));
}

struct WindowPlan {
  WindowPolicy policy = WindowPolicy::Tracking;
  int64_t half_width = 64;
  int64_t guard = 48;  // minimal walk distance to the seam
};

struct WindowOptions {
  WindowPolicy policy = WindowPolicy::Auto;
  double safety = 4.0;           // compute_window safety for fixed windows
  double tracking_safety = 4.0;  // tracking_half_width safety
  double auto_budget = 2e8;      // site-steps above which Auto picks tracking
};

inline WindowPlan plan_window(int64_t n, double nu, const WindowOptions& o) {
  n = std::max<int64_t>(n, 1);
  WindowPolicy p = o.policy;
  int64_t M = compute_window(n, nu, o.safety);
  if (p == WindowPolicy::Auto)
    p = double(2 * M + 1) * std::max(1.0, nu) * double(n) <= o.auto_budget ? WindowPolicy::Fixed
                                                                          : WindowPolicy::Tracking;
  if (p == WindowPolicy::Fixed) return {p, M, int64_t(std::ceil(o.safety * (1 + nu) * double(n)))};
  int64_t W = tracking_half_width(n, nu, o.tracking_safety);
  return {p, W, W - W / 4};
}

// ---------------------- environment driver ----------------------

struct EnvDiagnostics {
  int64_t reanchors = 0;
  int64_t regrows = 0;
  int64_t refreshed_sites = 0;
  int64_t renewals = 0;
  int64_t final_size = 0;
};

// One or more coupled layers of the same model at nondecreasing densities,
// evolved with shared randomness (shared clocks for SEP, matched particles
// for PCRW), on a periodic window. Under a tracking plan the seam is moved
// away from the walkers, and sites crossing it are redrawn from the
// stationary law (a product-measure-preserving refresh).
class Environment {
 public:
  Environment(Model model, double nu, std::vector<double> rhos, WindowPlan plan, uint64_t seed,
              int64_t center = 0, bool boundary_mode = false)
      : model_(model), nu_(nu), rhos_(std::move(rhos)), plan_(plan), seed_(seed) {
    if (rhos_.empty()) throw ParameterError("Environment needs at least one density");
    for (double r : rhos_) EnvParams{model, r, nu, boundary_mode}.validate();
    sampler_ = LayeredSiteSampler(model_, rhos_);
    frozen_ = true;
    for (double r : rhos_) {
      bool fr = model_ == Model::SEP ? (r == 0 || r == 1) : r == 0;
      frozen_ = frozen_ && fr;
    }
    layers_.assign(rhos_.size(), EnvState(model_, LatticeWindow{plan_.half_width}));
    for (auto& l : layers_) l.reanchor(center - plan_.half_width);
    for (auto& l : layers_) ptrs_.push_back(&l);
    start_epoch(0);
  }

  Model model() const { return model_; }
  double nu() const { return nu_; }
  const std::vector<double>& rhos() const { return rhos_; }
  size_t layer_count() const { return layers_.size(); }
  double time() const { return time_; }
  int64_t epoch() const { return epoch_; }
  const WindowPlan& plan() const { return plan_; }
  EnvState& layer(size_t i) { return layers_[i]; }
  const EnvState& layer(size_t i) const { return layers_[i]; }
  const EnvDiagnostics& diagnostics() const { return diag_; }

  // Keys of the streams used in the current epoch.
  std::vector<uint64_t> epoch_keys() const { return {init_.key(), evolve_.key(), fresh_.key()}; }

  uint32_t occupancy(size_t layer, int64_t x) const { return layers_[layer].get(x); }

  // Advances the clock by one unit. With `renew_now` the evolution is
  // skipped and the whole window is replaced by a fresh stationary sample.
  void step(bool renew_now = false) {
    if (renew_now) {
      time_ += 1;
      for (auto& l : layers_) l.time = time_;
      renew();
      return;
    }
    if (!frozen_) {
      if (model_ == Model::SEP)
        advance_sep_layers(ptrs_, nu_, 1.0, evolve_);
      else
        pcrw_step_layers(ptrs_, evolve_, scratch_);
    }
    time_ += 1;
    for (auto& l : layers_) l.time = time_;
  }

  // Fresh stationary sample everywhere with a new, disjoint stream epoch.
  void renew() {
    start_epoch(epoch_ + 1);
    diag_.renewals++;
  }

  // Ensures [xmin, xmax] stays at least guard away from the seam.
  void follow(int64_t xmin, int64_t xmax) {
    auto& s0 = layers_[0];
    int64_t g = plan_.guard;
    bool ok = xmin - s0.lo() >= g && s0.hi() - xmax >= g;
    if (ok) return;
    if (plan_.policy == WindowPolicy::Fixed)
      throw SeamBreach("walk within " + std::to_string(g) + " sites of the window seam");
    int64_t M = (s0.size() - 1) / 2;
    int64_t mid = xmin + (xmax - xmin) / 2;
    int64_t need = (xmax - xmin) / 2 + g + 1;
    if (need > M) {
      int64_t nm = std::max(2 * M, need + plan_.half_width / 4);
      for (auto& l : layers_) {
        auto in = l.regrow(mid - nm, nm);
        if (&l == &layers_[0]) refill(in);
      }
      diag_.regrows++;
    } else {
      std::vector<int64_t> in;
      for (auto& l : layers_) in = l.reanchor(mid - M);
      refill(in);
      diag_.reanchors++;
    }
    diag_.final_size = layers_[0].size();
  }

 private:
  void start_epoch(int64_t e) {
    epoch_ = e;
    init_ = RngStream(derive_key(seed_, {tag::renewal, uint64_t(e), tag::env_init}));
    evolve_ = RngStream(derive_key(seed_, {tag::renewal, uint64_t(e), tag::env_evolve}));
    fresh_ = RngStream(derive_key(seed_, {tag::renewal, uint64_t(e), tag::env_fresh}));
    auto& s0 = layers_[0];
    for (int64_t x = s0.lo(); x <= s0.hi(); ++x)
      sampler_.sample(init_, [&](size_t i, uint32_t c) { layers_[i].set(x, c); });
    diag_.final_size = s0.size();
  }

  void refill(const std::vector<int64_t>& sites) {
    for (int64_t x : sites)
      sampler_.sample(fresh_, [&](size_t i, uint32_t c) { layers_[i].set(x, c); });
    diag_.refreshed_sites += int64_t(sites.size());
  }

  Model model_;
  double nu_;
  std::vector<double> rhos_;
  WindowPlan plan_;
  uint64_t seed_;
  LayeredSiteSampler sampler_;
  bool frozen_ = false;
  std::vector<EnvState> layers_;
  std::vector<EnvState*> ptrs_;
  std::vector<std::vector<uint32_t>> scratch_;
  RngStream init_, evolve_, fresh_;
  int64_t epoch_ = 0;
  double time_ = 0;
  EnvDiagnostics diag_;
};

// ---------------------- walk drivers ----------------------

struct Walker {
  size_t layer = 0;
  int64_t x = 0;
};

// Advances several walkers from time m = env.time() for n steps. Every walker
// reads the shared arrow field; walker i reads its own layer. visit(k, xs)
// is called for k = 0..n and may return false to stop early. With
// renew_every = L > 0 the environment is resampled at absolute times that are
// multiples of L. Returns the number of steps taken.
template <class Visit>
int64_t drive_walkers(Environment& env, std::vector<Walker>& ws, int64_t n, const ArrowSource& arrows,
                      const WalkParams& wp, Visit&& visit, int64_t renew_every = 0) {
  int64_t m = int64_t(env.time());
  std::vector<int64_t> xs(ws.size());
  for (size_t i = 0; i < ws.size(); ++i) {
    xs[i] = ws[i].x;
    if (!SpaceTimePoint{ws[i].x, m}.in_lattice()) throw ParameterError("walk start not in the lattice");
  }
  if (!visit(int64_t(0), static_cast<const std::vector<int64_t>&>(xs))) return 0;
  for (int64_t k = 0; k < n; ++k) {
    auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
    env.follow(*mn, *mx);
    for (size_t i = 0; i < ws.size(); ++i) {
      uint32_t occ = env.occupancy(ws[i].layer, xs[i]);
      xs[i] += arrow(occ, arrows.u(xs[i], m + k), wp);
    }
    for (size_t i = 0; i < ws.size(); ++i) ws[i].x = xs[i];
    if (!visit(k + 1, static_cast<const std::vector<int64_t>&>(xs))) return k + 1;
    if (k + 1 < n) env.step(renew_every > 0 && (m + k + 1) % renew_every == 0);
  }
  return n;
}

// Single walk on layer `layer`, started at (start.x, env.time()).
inline Trajectory run_quenched(Environment& env, SpaceTimePoint start, int64_t n,
                               const ArrowSource& arrows, const WalkParams& wp, size_t layer = 0) {
  wp.validate();
  if (!start.in_lattice()) throw ParameterError("start point not in the lattice");
  if (double(start.n) != env.time()) throw ParameterError("environment is not at the start time");
  Trajectory tr;
  tr.start = start;
  tr.steps.reserve(size_t(std::max<int64_t>(n, 0)));
  std::vector<Walker> ws{{layer, start.x}};
  int64_t prev = start.x;
  drive_walkers(env, ws, n, arrows, wp, [&](int64_t k, const std::vector<int64_t>& xs) {
    if (k > 0) tr.steps.push_back(int8_t(xs[0] - prev));
    prev = xs[0];
    return true;
  });
  return tr;
}

struct FamilyResult {
  std::vector<Trajectory> paths;
  int64_t order_violations = 0;
  int64_t coalescence_violations = 0;
};

// Coupled family X^w on one layer: all walks read the same arrows.
inline FamilyResult run_coupled_family(Environment& env, const std::vector<SpaceTimePoint>& starts,
                                       int64_t n, const ArrowSource& arrows, const WalkParams& wp,
                                       size_t layer = 0) {
  wp.validate();
  FamilyResult r;
  if (starts.empty()) return r;
  for (auto& s : starts) {
    if (s.n != starts[0].n) throw ParameterError("coupled family needs equal start times");
    if (!s.in_lattice()) throw ParameterError("start point not in the lattice");
  }
  if (double(starts[0].n) != env.time()) throw ParameterError("environment is not at the start time");
  std::vector<Walker> ws;
  for (auto& s : starts) ws.push_back({layer, s.x});
  r.paths.resize(starts.size());
  for (size_t i = 0; i < starts.size(); ++i) r.paths[i].start = starts[i];
  std::vector<int64_t> prev(starts.size());
  std::vector<std::vector<char>> met(starts.size(), std::vector<char>(starts.size(), 0));
  drive_walkers(env, ws, n, arrows, wp, [&](int64_t k, const std::vector<int64_t>& xs) {
    for (size_t i = 0; i < xs.size(); ++i) {
      if (k > 0) r.paths[i].steps.push_back(int8_t(xs[i] - prev[i]));
      for (size_t j = 0; j < xs.size(); ++j) {
        if (i == j) continue;
        bool was_le = starts[i].x <= starts[j].x;
        if (was_le && xs[i] > xs[j]) r.order_violations++;
        if (met[i][j] && xs[i] != xs[j]) r.coalescence_violations++;
        if (xs[i] == xs[j]) met[i][j] = 1;
      }
    }
    prev = xs;
    return true;
  });
  return r;
}

struct AnnealedDiagnostics {
  WindowPlan plan;
  EnvDiagnostics env;
};

struct AnnealedRun {
  Trajectory path;
  AnnealedDiagnostics diag;
};

inline uint64_t env_seed_of(uint64_t master) { return derive_key(master, {tag::env_init}); }
inline uint64_t arrow_seed_of(uint64_t master) { return derive_key(master, {tag::arrows}); }

// eta_0 stationary, then the quenched walk from (0, 0).
inline AnnealedRun run_annealed(const EnvParams& ep, const WalkParams& wp, int64_t n, uint64_t master_seed,
                                const WindowOptions& wo = {}) {
  ep.validate();
  wp.validate();
  WindowPlan plan = plan_window(n, ep.nu, wo);
  Environment env(ep.model, ep.nu, {ep.rho}, plan, env_seed_of(master_seed), 0, ep.boundary_mode);
  ArrowSource arrows(arrow_seed_of(master_seed));
  AnnealedRun r;
  r.path = run_quenched(env, {0, 0}, n, arrows, wp);
  r.diag = {plan, env.diagnostics()};
  return r;
}

}  // namespace driftlab
