#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "driftlab/pcrw.hpp"
#include "driftlab/sep.hpp"
#include "driftlab/walk.hpp"

namespace driftlab {

// ---------------------- reports ----------------------

// Interval counts of both processes at fixed times (relative to the start of
// the coupling), for two-sample checks against direct simulation.
struct ProbeSpec {
  std::vector<double> times;
  std::vector<std::pair<int64_t, int64_t>> intervals;
};

struct MarginalSamples {
  std::vector<double> times;
  std::vector<std::vector<int64_t>> low, high;  // [time][interval]
};

struct MatchState {
  int64_t paired = 0;                               // |Pai_s|
  std::vector<std::pair<int64_t, int64_t>> matches;  // (low site, high site)
  int64_t unmatched_low = 0;
  int64_t max_separation = 0;
  int64_t injectivity_violations = 0;
};

struct StageReport {
  int64_t index = 0;
  double start = 0;
  int64_t a = 0, b = 0;  // I_s
  bool band_ok = false;  // every short interval of I_s has high >= (rho + eps/2)|I| >= low
  bool decoupled = false;
  MatchState match;
};

struct CouplingReport {
  std::string kind;
  std::map<std::string, bool> events;
  std::vector<int64_t> violation_sites;
  std::map<std::string, double> params;
  bool regime = false;  // asymptotic parameter regime of the construction
  std::string note;
  std::vector<StageReport> stages;
  int64_t coalescence_violations = 0;
  std::vector<int64_t> thinning_total, thinning_retained;  // per edge, covering edges only
  MarginalSamples marginals;
  EnvState low, high;  // at the end

  bool success(const std::string& e) const {
    auto it = events.find(e);
    return it != events.end() && it->second;
  }
};

// ---------------------- paired interchange engine ----------------------

enum class EdgeRule : uint8_t { Shared, Independent, Covering };
enum class MatchPolicy { Partial, Decouple };

// Two SEP configurations on one periodic window with labelled particles.
// Every edge carries a merged clock of rate nu whose arrivals get fair
// labels. eta moves on label 1. eta' moves on label 1 on Shared edges, on
// label 0 on Independent edges, and on Covering edges on label 1 iff a
// co-located matched pair sits at an endpoint, on label 0 otherwise.
// Each process alone sees rate-nu/2 edge clocks.
class PairedSep {
 public:
  PairedSep(const EnvState& high, const EnvState& low, double nu)
      : nu_(nu), n_(high.size()), lo_(high.lo()) {
    require_sep(high, "PairedSep");
    require_sep(low, "PairedSep");
    if (!high.same_geometry(low)) throw ParameterError("PairedSep: geometry mismatch");
    if (!(nu > 0)) throw ParameterError("PairedSep: nu must be > 0");
    h_.assign(size_t(n_), -1);
    l_.assign(size_t(n_), -1);
    int32_t nh = 0, nl = 0;
    for (int64_t i = 0; i < n_; ++i) {
      if (high.get(lo_ + i)) h_[size_t(i)] = nh++;
      if (low.get(lo_ + i)) l_[size_t(i)] = nl++;
    }
    mate_.assign(size_t(nl), -1);
    rule_.assign(size_t(n_), EdgeRule::Shared);
    total_.assign(size_t(n_), 0);
    kept_.assign(size_t(n_), 0);
  }

  int64_t lo() const { return lo_; }
  int64_t hi() const { return lo_ + n_ - 1; }
  double time() const { return time_; }
  bool high_at(int64_t x) const { return h_[idx(x)] >= 0; }
  bool low_at(int64_t x) const { return l_[idx(x)] >= 0; }

  // rule(x) is the rule of the edge {x, x+1}; the seam edge is passed x = hi.
  void set_rules(const std::function<EdgeRule(int64_t)>& rule) {
    all_shared_ = true;
    for (int64_t i = 0; i < n_; ++i) {
      rule_[size_t(i)] = rule(lo_ + i);
      all_shared_ = all_shared_ && rule_[size_t(i)] == EdgeRule::Shared;
    }
  }
  void set_all(EdgeRule r) {
    std::fill(rule_.begin(), rule_.end(), r);
    all_shared_ = r == EdgeRule::Shared;
  }
  void set_rule_range(int64_t a, int64_t b, EdgeRule r) {
    for (int64_t x = std::max(a, lo_); x <= std::min(b, hi()); ++x) rule_[idx(x)] = r;
    all_shared_ = std::all_of(rule_.begin(), rule_.end(), [](EdgeRule e) { return e == EdgeRule::Shared; });
  }

  void set_probes(ProbeSpec p) {
    probes_ = std::move(p);
    std::sort(probes_.times.begin(), probes_.times.end());
    next_probe_ = 0;
    record_due(time_);
  }
  const MarginalSamples& marginals() const { return samples_; }

  // Sustained domination on [a, b] from now on; the current state is checked
  // at once and every later event at its endpoints. Returns a watch id.
  size_t watch(int64_t a, int64_t b) {
    Watch w{std::max(a, lo_) - lo_, std::min(b, hi()) - lo_, true, false};
    watches_.push_back(w);
    size_t id = watches_.size() - 1;
    for (int64_t i = w.a; i <= w.b; ++i) check_one(watches_[id], size_t(i));
    return id;
  }
  void unwatch(size_t id) { watches_[id].active = false; }
  bool watch_failed(size_t id = 0) const { return id < watches_.size() && watches_[id].failed; }
  const std::vector<int64_t>& violation_sites() const { return violations_; }

  void run(double d, RngStream& rng) {
    if (d < 0) throw ParameterError("PairedSep::run: negative duration");
    double end = time_ + d;
    while (next_probe_ < probes_.times.size() && probes_.times[next_probe_] <= end) {
      run_raw(probes_.times[next_probe_] - time_, rng);
      time_ = probes_.times[next_probe_];
      record_due(time_);
    }
    run_raw(end - time_, rng);
    time_ = end;
  }

  bool paired(size_t i) const { return l_[i] >= 0 && h_[i] >= 0 && mate_[size_t(l_[i])] == h_[i]; }

  // Resets the matching of low particles in [ra, rb], then pairs co-located
  // particles of I = [a, b] and matches the remaining low particles
  // leftmost-to-leftmost with unpaired high particles in each paving interval.
  MatchState match(int64_t a, int64_t b, int64_t mesh, int64_t ra, int64_t rb) {
    MatchState m;
    for (int64_t x = std::max(ra, lo_); x <= std::min(rb, hi()); ++x)
      if (l_[idx(x)] >= 0) mate_[size_t(l_[idx(x)])] = -1;
    a = std::max(a, lo_);
    b = std::min(b, hi());
    if (a > b) return m;
    std::vector<int64_t> ul, uh;
    for (auto [pa, pb] : pave(a, b, mesh)) {
      ul.clear();
      uh.clear();
      for (int64_t x = pa; x <= pb; ++x) {
        size_t i = idx(x);
        if (l_[i] >= 0 && h_[i] >= 0) {
          mate_[size_t(l_[i])] = h_[i];
          m.paired++;
        } else if (l_[i] >= 0) {
          ul.push_back(x);
        } else if (h_[i] >= 0) {
          uh.push_back(x);
        }
      }
      size_t k = std::min(ul.size(), uh.size());
      for (size_t j = 0; j < k; ++j) {
        mate_[size_t(l_[idx(ul[j])])] = h_[idx(uh[j])];
        m.matches.push_back({ul[j], uh[j]});
        m.max_separation = std::max(m.max_separation, std::abs(ul[j] - uh[j]));
      }
      m.unmatched_low += int64_t(ul.size() - k);
    }
    std::vector<int32_t> used;
    for (int64_t x = a; x <= b; ++x)
      if (l_[idx(x)] >= 0 && mate_[size_t(l_[idx(x)])] >= 0) used.push_back(mate_[size_t(l_[idx(x)])]);
    std::sort(used.begin(), used.end());
    m.injectivity_violations = int64_t(used.size()) -
                               int64_t(std::unique(used.begin(), used.end()) - used.begin());
    return m;
  }

  // Every interval of [a, b] with length in [mesh/2, mesh] has
  // high >= high_min |I| and low <= low_max |I|.
  bool band(int64_t a, int64_t b, int64_t mesh, double high_min, double low_max) const {
    a = std::max(a, lo_);
    b = std::min(b, hi());
    if (a > b) return true;
    std::vector<int64_t> ph(size_t(b - a + 2), 0), pl(size_t(b - a + 2), 0);
    for (int64_t x = a; x <= b; ++x) {
      ph[size_t(x - a + 1)] = ph[size_t(x - a)] + (h_[idx(x)] >= 0);
      pl[size_t(x - a + 1)] = pl[size_t(x - a)] + (l_[idx(x)] >= 0);
    }
    int64_t len = b - a + 1;
    for (int64_t m = std::max<int64_t>(1, mesh / 2); m <= std::min(mesh, len); ++m) {
      double hmin = high_min * double(m) - 1e-9, lmax = low_max * double(m) + 1e-9;
      for (int64_t s = 0; s + m <= len; ++s) {
        if (double(ph[size_t(s + m)] - ph[size_t(s)]) < hmin) return false;
        if (double(pl[size_t(s + m)] - pl[size_t(s)]) > lmax) return false;
      }
    }
    return true;
  }

  // Sites of [a, b] where low is occupied and high is empty.
  std::vector<int64_t> undominated(int64_t a, int64_t b, size_t cap = 32) const {
    std::vector<int64_t> out;
    for (int64_t x = std::max(a, lo_); x <= std::min(b, hi()) && out.size() < cap; ++x)
      if (l_[idx(x)] >= 0 && h_[idx(x)] < 0) out.push_back(x);
    return out;
  }

  int64_t coalescence_violations() const { return coalescence_violations_; }
  const std::vector<int64_t>& thinning_total() const { return total_; }
  const std::vector<int64_t>& thinning_retained() const { return kept_; }

  void write(EnvState& high, EnvState& low) const {
    for (int64_t i = 0; i < n_; ++i) {
      high.set(lo_ + i, h_[size_t(i)] >= 0);
      low.set(lo_ + i, l_[size_t(i)] >= 0);
    }
  }

  // Intervals of length mesh from the left end; a short remainder is merged
  // into the second half of the last full interval.
  static std::vector<std::pair<int64_t, int64_t>> pave(int64_t a, int64_t b, int64_t mesh) {
    std::vector<std::pair<int64_t, int64_t>> out;
    int64_t len = b - a + 1;
    if (len <= 0) return out;
    if (len <= mesh) return {{a, b}};
    int64_t q = len / mesh, r = len % mesh, half = mesh / 2;
    for (int64_t i = 0; i < q; ++i) out.push_back({a + i * mesh, a + (i + 1) * mesh - 1});
    if (r == 0) return out;
    if (r >= half) {
      out.push_back({a + q * mesh, b});
    } else {
      int64_t s = out.back().first;
      out.back() = {s, s + half - 1};
      out.push_back({s + half, b});
    }
    return out;
  }

 private:
  size_t idx(int64_t x) const { return size_t(x - lo_); }

  struct Watch {
    int64_t a, b;
    bool active, failed;
  };

  void check_one(Watch& w, size_t i) {
    if (!w.active || int64_t(i) < w.a || int64_t(i) > w.b) return;
    if (l_[i] >= 0 && h_[i] < 0) {
      w.failed = true;
      if (violations_.size() < 32) violations_.push_back(lo_ + int64_t(i));
    }
  }
  void check(size_t i) {
    for (auto& w : watches_) check_one(w, i);
  }

  void record_due(double now) {
    while (next_probe_ < probes_.times.size() && probes_.times[next_probe_] <= now) {
      samples_.times.push_back(probes_.times[next_probe_]);
      std::vector<int64_t> cl, ch;
      for (auto [a, b] : probes_.intervals) {
        int64_t sl = 0, sh = 0;
        for (int64_t x = a; x <= b; ++x) {
          sl += l_[idx(x)] >= 0;
          sh += h_[idx(x)] >= 0;
        }
        cl.push_back(sl);
        ch.push_back(sh);
      }
      samples_.low.push_back(std::move(cl));
      samples_.high.push_back(std::move(ch));
      ++next_probe_;
    }
  }

  void run_raw(double d, RngStream& rng) {
    if (d <= 0) return;
    bool shared = all_shared_;
    uint64_t k = poisson_count((shared ? 0.5 : 1.0) * nu_ * double(n_) * d, rng);
    EdgePicker pick(static_cast<uint64_t>(n_));
    uint64_t bits = 0;
    int nb = 0;
    int32_t* h = h_.data();
    int32_t* l = l_.data();
    for (uint64_t e = 0; e < k; ++e) {
      size_t j = size_t(pick(rng));
      size_t j2 = int64_t(j) + 1 == n_ ? 0 : j + 1;
      if (shared) {
        std::swap(h[j], h[j2]);
        std::swap(l[j], l[j2]);
      } else {
        if (nb == 0) {
          bits = rng();
          nb = 64;
        }
        bool lab = bits & 1;
        bits >>= 1;
        --nb;
        switch (rule_[j]) {
          case EdgeRule::Shared:
            if (lab) {
              std::swap(h[j], h[j2]);
              std::swap(l[j], l[j2]);
            }
            break;
          case EdgeRule::Independent:
            if (lab)
              std::swap(h[j], h[j2]);
            else
              std::swap(l[j], l[j2]);
            break;
          case EdgeRule::Covering:
            cover_event(j, j2, lab);
            break;
        }
      }
      if (!watches_.empty()) {
        check(j);
        check(j2);
      }
    }
  }

  void cover_event(size_t j, size_t j2, bool lab) {
    int32_t p1 = paired(j) ? l_[j] : -1, p2 = paired(j2) ? l_[j2] : -1;
    bool keep_low = (p1 >= 0 || p2 >= 0) ? lab : !lab;
    total_[j]++;
    kept_[j] += keep_low;
    if (lab) std::swap(h_[j], h_[j2]);
    if (keep_low) std::swap(l_[j], l_[j2]);
    for (int32_t p : {p1, p2}) {
      if (p < 0) continue;
      size_t at_low = l_[j] == p ? j : j2;
      size_t at_high = h_[j] == mate_[size_t(p)] ? j : j2;
      if (at_low != at_high || h_[at_high] != mate_[size_t(p)]) coalescence_violations_++;
    }
  }

  double nu_;
  int64_t n_, lo_;
  double time_ = 0;
  std::vector<int32_t> h_, l_, mate_;
  std::vector<EdgeRule> rule_;
  bool all_shared_ = true;
  std::vector<int64_t> total_, kept_;
  int64_t coalescence_violations_ = 0;
  std::vector<Watch> watches_;
  std::vector<int64_t> violations_;
  ProbeSpec probes_;
  size_t next_probe_ = 0;
  MarginalSamples samples_;
};

// ---------------------- staged covering ----------------------

struct CoverPlan {
  std::vector<std::pair<int64_t, int64_t>> regions;  // control intervals, disjoint
  int64_t mesh = 0;
  int64_t tau = 0;
  int64_t stages = 0;
};

inline int64_t integer_fourth_root(int64_t t) {
  int64_t r = int64_t(std::floor(std::pow(double(t), 0.25)));
  while ((r + 1) * (r + 1) * (r + 1) * (r + 1) <= t) ++r;
  while (r > 0 && r * r * r * r > t) --r;
  return r;
}

// Runs the stages of the covering construction from the engine's current
// time. In stage i each region [a, b] shrinks to I = [a + 2 nu i tau,
// b - 2 nu i tau]; edges with both endpoints in a region are Covering, all
// other edges follow `outside`. With `before_unit` the stage is run in unit
// steps, calling it before each one.
inline void run_covering(PairedSep& e, const CoverPlan& p, double rho, double eps, double nu,
                         MatchPolicy policy, EdgeRule outside, RngStream& rng,
                         std::vector<StageReport>& log,
                         const std::function<void()>& before_unit = {}) {
  if (p.mesh < 2) throw ParameterError("covering: mesh must be >= 2");
  if (p.tau < 1 || p.stages < 1) throw ParameterError("covering: tau and stages must be >= 1");
  auto in_region = [&](int64_t x) {
    for (auto [a, b] : p.regions)
      if (x >= a && x + 1 <= b) return true;
    return false;
  };
  e.set_rules([&](int64_t x) { return in_region(x) ? EdgeRule::Covering : outside; });
  std::vector<bool> decoupled(p.regions.size(), false);
  for (int64_t i = 0; i < p.stages; ++i) {
    double s = double(i * p.tau);
    for (size_t r = 0; r < p.regions.size(); ++r) {
      auto [ra, rb] = p.regions[r];
      StageReport st;
      st.index = i;
      st.start = e.time();
      st.a = ra + int64_t(std::ceil(2 * nu * s));
      st.b = rb - int64_t(std::ceil(2 * nu * s));
      st.band_ok = e.band(st.a, st.b, p.mesh, rho + eps / 2, rho + eps / 2);
      if (policy == MatchPolicy::Decouple && !st.band_ok && !decoupled[r]) {
        decoupled[r] = true;
        e.set_rule_range(ra, rb - 1, EdgeRule::Independent);
      }
      st.decoupled = decoupled[r];
      if (!decoupled[r]) st.match = e.match(st.a, st.b, p.mesh, ra, rb);
      log.push_back(std::move(st));
    }
    if (before_unit) {
      for (int64_t u = 0; u < p.tau; ++u) {
        before_unit();
        e.run(1, rng);
      }
    } else {
      e.run(double(p.tau), rng);
    }
  }
}

inline void fill_thinning(CouplingReport& r, const PairedSep& e) {
  auto& tot = e.thinning_total();
  auto& kept = e.thinning_retained();
  for (size_t i = 0; i < tot.size(); ++i) {
    if (tot[i] == 0) continue;
    r.thinning_total.push_back(tot[i]);
    r.thinning_retained.push_back(kept[i]);
  }
}

inline void finish_report(CouplingReport& r, const PairedSep& e, const EnvState& geometry) {
  r.coalescence_violations = e.coalescence_violations();
  r.marginals = e.marginals();
  r.high = EnvState(Model::SEP, geometry.window());
  r.low = EnvState(Model::SEP, geometry.window());
  e.write(r.high, r.low);
}

// ---------------------- initial configurations ----------------------

// low ~ Ber(rho_low) <= high ~ Ber(rho_high) sitewise on [-H, H] (thinning),
// independent outside.
inline std::pair<EnvState, EnvState> sample_local_domination(double rho_low, double rho_high, int64_t H,
                                                             const LatticeWindow& w, RngStream& rng) {
  if (rho_low > rho_high) throw ParameterError("sample_local_domination: rho_low > rho_high");
  EnvState low(Model::SEP, w), high(Model::SEP, w);
  for (int64_t x = low.lo(); x <= low.hi(); ++x) {
    double u = rng.uniform();
    high.set(x, u < rho_high);
    if (x >= -H && x <= H)
      low.set(x, u < rho_low);
    else
      low.set(x, rng.uniform() < rho_low);
  }
  return {std::move(high), std::move(low)};
}

// ---------------------- drift ----------------------

inline void require_window(const EnvState& s, int64_t a, int64_t b, const char* who) {
  if (!s.contains(a) || !s.contains(b)) throw ParameterError(std::string(who) + ": window too small");
}

inline void require_domination(const EnvState& high, const EnvState& low, int64_t a, int64_t b,
                               const char* who) {
  for (int64_t x = a; x <= b; ++x)
    if (low.get(x) > high.get(x)) throw ParameterError(std::string(who) + ": high does not dominate low");
}

// Shared clocks (SEP) or shared moves of the k-th particles (PCRW). Success
// means domination on [-H + 2 nu k t, H - 2 nu k t] at every time in [0, t]
// (PCRW: [-H + k t, H - k t], at every step).
inline CouplingReport drift_coupling(const EnvState& high, const EnvState& low, double nu, double t,
                                     int64_t H, int64_t k, uint64_t seed, ProbeSpec probes = {}) {
  if (!high.same_geometry(low) || high.model() != low.model())
    throw ParameterError("drift_coupling: window mismatch");
  if (!(t >= 0) || H < 0 || k < 1) throw ParameterError("drift_coupling: need t >= 0, H >= 0, k >= 1");
  require_window(high, -H, H, "drift_coupling");
  require_domination(high, low, -H, H, "drift_coupling");
  CouplingReport r;
  r.kind = "drift";
  r.params = {{"nu", nu}, {"t", t}, {"H", double(H)}, {"k", double(k)}};
  RngStream rng(derive_key(seed, {tag::coupling, 0x01}));
  if (high.model() == Model::PCRW) {
    int64_t steps = int64_t(t);
    int64_t a = -H + k * steps, b = H - k * steps;
    EnvState hi = high, lo = low;
    std::vector<std::vector<uint32_t>> scratch;
    bool ok = true;
    for (int64_t s = 0; s < steps; ++s) {
      pcrw_step_layers({&lo, &hi}, rng, scratch);
      for (int64_t x = a; x <= b; ++x)
        if (lo.get(x) > hi.get(x)) {
          ok = false;
          if (r.violation_sites.size() < 32) r.violation_sites.push_back(x);
        }
    }
    hi.time += double(steps);
    lo.time += double(steps);
    r.events["domination"] = ok;
    r.regime = true;
    r.high = std::move(hi);
    r.low = std::move(lo);
    return r;
  }
  if (!(nu > 0)) throw ParameterError("drift_coupling: nu must be > 0");
  double shrink = 2 * nu * double(k) * t;
  PairedSep e(high, low, nu);
  e.set_probes(std::move(probes));
  e.watch(-H + int64_t(std::ceil(shrink)), H - int64_t(std::ceil(shrink)));
  e.run(t, rng);
  r.events["domination"] = !e.watch_failed();
  r.violation_sites = e.violation_sites();
  r.regime = true;
  finish_report(r, e, high);
  return r;
}

// ---------------------- covering ----------------------

struct CoveringOptions {
  int64_t mesh = 0;    // 0: floor(t^(1/4))
  int64_t tau = 0;     // 0: mesh^3
  int64_t stages = 0;  // 0: mesh
  MatchPolicy policy = MatchPolicy::Partial;
  bool refuse = true;  // refuse inputs outside the density bands
  ProbeSpec probes;
};

inline CoverPlan covering_plan(int64_t t, const CoveringOptions& o) {
  CoverPlan p;
  p.mesh = o.mesh > 0 ? o.mesh : integer_fourth_root(t);
  p.tau = o.tau > 0 ? o.tau : p.mesh * p.mesh * p.mesh;
  p.stages = o.stages > 0 ? o.stages : p.mesh;
  return p;
}

// Staged covering of a sparse eta' by a dense eta on [-H, H] over [0, t].
// Success: eta_t >= eta'_t on [-H + 4 nu t, H - 4 nu t].
inline CouplingReport covering_coupling(const EnvState& high, const EnvState& low, double rho, double eps,
                                        double nu, int64_t t, int64_t H, uint64_t seed,
                                        CoveringOptions o = {}) {
  require_sep(high, "covering_coupling");
  require_sep(low, "covering_coupling");
  if (!high.same_geometry(low)) throw ParameterError("covering_coupling: window mismatch");
  if (!(eps > 0)) throw ParameterError("covering_coupling: eps must be > 0");
  if (!(nu > 0) || t < 1 || H < 1) throw ParameterError("covering_coupling: need nu > 0, t >= 1, H >= 1");
  if (double(H) <= 4 * nu * double(t))
    throw ParameterError("covering_coupling: H <= 4 nu t leaves no interval to cover");
  require_window(high, -H, H, "covering_coupling");
  CoverPlan plan = covering_plan(t, o);
  if (plan.mesh < 2) throw ParameterError("covering_coupling: mesh < 2");
  if (plan.stages * plan.tau > t) throw ParameterError("covering_coupling: stages * tau exceeds t");
  plan.regions = {{-H, H}};

  CouplingReport r;
  r.kind = "covering";
  r.params = {{"rho", rho}, {"eps", eps}, {"nu", nu}, {"t", double(t)}, {"H", double(H)},
              {"mesh", double(plan.mesh)}, {"tau", double(plan.tau)}, {"stages", double(plan.stages)}};
  PairedSep e(high, low, nu);
  bool band = e.band(-H, H, plan.mesh, rho + 0.75 * eps, rho + 0.25 * eps);
  if (!band && o.refuse) throw ParameterError("covering_coupling: density bands fail on [-H, H]");
  r.events["initial_band"] = band;
  r.regime = nu * double(plan.mesh) * eps * eps > 1.0;
  r.note = "regime flag uses unit constants";
  e.set_probes(std::move(o.probes));
  RngStream rng(derive_key(seed, {tag::coupling, 0x02}));
  run_covering(e, plan, rho, eps, nu, o.policy, EdgeRule::Independent, rng, r.stages);
  e.set_all(EdgeRule::Shared);
  e.run(double(t - plan.stages * plan.tau), rng);
  int64_t m = int64_t(std::ceil(4 * nu * double(t)));
  r.violation_sites = e.undominated(-H + m, H - m);
  r.events["domination"] = r.violation_sites.empty();
  bool all_bands = true;
  for (auto& s : r.stages) all_bands = all_bands && s.band_ok;
  r.events["stage_bands"] = all_bands;
  fill_thinning(r, e);
  finish_report(r, e, high);
  return r;
}

// ---------------------- surgery ----------------------

struct SurgeryOptions {
  int64_t mesh = 0;    // first step; 0: floor(t1^(1/4)) with t1 the step length below
  int64_t t1 = 0;      // 0: mesh^4
  int64_t mesh2 = 0;   // second step; 0: mesh
  int64_t tau2 = 0;    // 0: mesh2^3
  int64_t stages2 = 0; // 0: mesh2
  MatchPolicy policy = MatchPolicy::Partial;
  ProbeSpec probes;
};

// Shared clocks near the centre and outside [-H2, H2], covering on the two
// flanks up to t1; a second covering pass over [-H2 + 2 nu t1, H2 - 2 nu t1]
// re-pairs the particles left near +-H1; shared clocks until t.
// Events: "inner" = domination on [-H1 + 4 nu t, H1 - 4 nu t] at all times,
// "outer" = domination on [-H2 + 6 nu t, H2 - 6 nu t] at time t.
inline CouplingReport surgery_coupling(const EnvState& high, const EnvState& low, double rho, double eps,
                                       double nu, int64_t H1, int64_t H2, int64_t t, uint64_t seed,
                                       SurgeryOptions o = {}) {
  require_sep(high, "surgery_coupling");
  require_sep(low, "surgery_coupling");
  if (!high.same_geometry(low)) throw ParameterError("surgery_coupling: window mismatch");
  if (H2 <= H1 || H1 < 1) throw ParameterError("surgery_coupling: need 1 <= H1 < H2");
  if (!(eps > 0) || !(nu > 0) || t < 1) throw ParameterError("surgery_coupling: need eps, nu > 0, t >= 1");
  require_window(high, -H2, H2, "surgery_coupling");
  require_domination(high, low, -H1, H1, "surgery_coupling");
  int64_t mesh = o.mesh > 0 ? o.mesh : integer_fourth_root(o.t1 > 0 ? o.t1 : t);
  if (mesh < 2) throw ParameterError("surgery_coupling: mesh < 2");
  int64_t t1 = o.t1 > 0 ? o.t1 : mesh * mesh * mesh * mesh;
  CoverPlan p1{{{-H2, -H1 - 1}, {H1 + 1, H2}}, mesh, mesh * mesh * mesh, mesh};
  if (p1.stages * p1.tau > t1) throw ParameterError("surgery_coupling: first step longer than t1");
  CoverPlan p2;
  p2.mesh = o.mesh2 > 0 ? o.mesh2 : mesh;
  p2.tau = o.tau2 > 0 ? o.tau2 : p2.mesh * p2.mesh * p2.mesh;
  p2.stages = o.stages2 > 0 ? o.stages2 : p2.mesh;
  int64_t t2 = t1 + p2.stages * p2.tau;
  if (t2 > t) throw ParameterError("surgery_coupling: t shorter than both steps");
  int64_t c1 = int64_t(std::ceil(2 * nu * double(t1)));
  p2.regions = {{-H2 + c1, H2 - c1}};
  if (p2.regions[0].first >= p2.regions[0].second)
    throw ParameterError("surgery_coupling: second step interval is empty");

  CouplingReport r;
  r.kind = "surgery";
  r.params = {{"rho", rho},        {"eps", eps},         {"nu", nu},
              {"H1", double(H1)},  {"H2", double(H2)},   {"t", double(t)},
              {"t1", double(t1)},  {"t2", double(t2)},   {"mesh", double(mesh)},
              {"mesh2", double(p2.mesh)}, {"tau2", double(p2.tau)}, {"stages2", double(p2.stages)}};
  PairedSep e(high, low, nu);
  bool band = e.band(-H2, H2, mesh, rho + 0.75 * eps, rho + 0.25 * eps);
  if (!band) throw ParameterError("surgery_coupling: density bands fail on [-H2, H2]");
  r.regime = double(std::min(H1, H2 - H1 - 1)) > 10 * nu * double(t);
  r.note = "regime flag checks only min(H1, H2 - H1 - 1) > 10 nu t";
  e.set_probes(std::move(o.probes));
  RngStream rng(derive_key(seed, {tag::coupling, 0x03}));

  // G1 is domination on [-H1 + 2 nu t1, H1 - 2 nu t1] up to t1; "inner" is
  // watched on [-H1 + 4 nu t, H1 - 4 nu t] over the whole run.
  int64_t m4 = int64_t(std::ceil(4 * nu * double(t)));
  size_t w_inner = e.watch(-H1 + m4, H1 - m4);
  size_t w_g1 = e.watch(-H1 + c1, H1 - c1);
  run_covering(e, p1, rho, eps, nu, o.policy, EdgeRule::Shared, rng, r.stages);
  e.set_rules([&](int64_t x) {
    bool flank = (x >= -H2 && x + 1 <= -H1 - 1) || (x >= H1 + 1 && x + 1 <= H2);
    return flank ? EdgeRule::Independent : EdgeRule::Shared;
  });
  e.run(double(t1 - p1.stages * p1.tau), rng);
  bool g1 = !e.watch_failed(w_g1);
  e.unwatch(w_g1);
  int64_t f = int64_t(std::ceil(4 * nu * double(t1)));
  bool g2 = e.undominated(-H2 + f, -H1 - 1 - f).empty() && e.undominated(H1 + 1 + f, H2 - f).empty();

  run_covering(e, p2, rho, eps, nu, o.policy, EdgeRule::Independent, rng, r.stages);
  e.set_all(EdgeRule::Shared);
  e.run(double(t - t2), rng);
  int64_t m6 = int64_t(std::ceil(6 * nu * double(t)));
  r.violation_sites = e.undominated(-H2 + m6, H2 - m6);
  r.events["G1"] = g1;
  r.events["G2"] = g2;
  r.events["inner"] = !e.watch_failed(w_inner);
  r.events["outer"] = r.violation_sites.empty();
  fill_thinning(r, e);
  finish_report(r, e, high);
  return r;
}

// ---------------------- sprinkler ----------------------

inline double sprinkler_delta(double rho, double nu, int64_t ell) {
  return std::pow(nu / (2 * std::exp(nu)), 6 * (rho + 1) * double(ell));
}

// Shared clocks over [0, ell]. The surplus particle of eta in [0, ell] moves
// as a rate-nu walk on sites that are empty for eta'. Events: "target_0",
// "target_1" ({eta_ell(x) > 0, eta'_ell(x) = 0}) and "domination" on
// [-H + 2 nu k ell, H - 2 nu k ell] over [0, ell].
inline CouplingReport sprinkler_coupling(const EnvState& high, const EnvState& low, double rho, double nu,
                                         int64_t ell, int64_t H, int64_t k, uint64_t seed,
                                         ProbeSpec probes = {}) {
  require_sep(high, "sprinkler_coupling");
  require_sep(low, "sprinkler_coupling");
  if (!high.same_geometry(low)) throw ParameterError("sprinkler_coupling: window mismatch");
  if (ell < 1 || k < 1 || H < 1 || !(nu > 0))
    throw ParameterError("sprinkler_coupling: need ell, k, H >= 1 and nu > 0");
  require_window(high, -H, H, "sprinkler_coupling");
  require_window(high, -3 * ell + 1, 3 * ell, "sprinkler_coupling");
  require_domination(high, low, -H, H, "sprinkler_coupling");
  if (interval_count(high, 0, ell).count < interval_count(low, 0, ell).count + 1)
    throw ParameterError("sprinkler_coupling: no surplus particle in [0, ell]");
  if (double(interval_count(low, -3 * ell + 1, 3 * ell).count) > 6 * (rho + 1) * double(ell))
    throw ParameterError("sprinkler_coupling: low too dense near the origin");
  CouplingReport r;
  r.kind = "sprinkler";
  r.params = {{"rho", rho}, {"nu", nu}, {"ell", double(ell)}, {"H", double(H)}, {"k", double(k)},
              {"delta", sprinkler_delta(rho, nu, ell)}};
  r.regime = double(H) >= 2 * nu * double(ell * k);
  PairedSep e(high, low, nu);
  e.set_probes(std::move(probes));
  int64_t m = int64_t(std::ceil(2 * nu * double(k * ell)));
  e.watch(-H + m, H - m);
  RngStream rng(derive_key(seed, {tag::coupling, 0x04}));
  e.run(double(ell), rng);
  for (int64_t x : {0, 1})
    r.events["target_" + std::to_string(x)] = e.high_at(x) && !e.low_at(x);
  r.events["domination"] = !e.watch_failed();
  r.violation_sites = e.violation_sites();
  finish_report(r, e, high);
  return r;
}

// ---------------------- scale doubling ----------------------

struct ScaleCouplingParams {
  double rho = 0.2;
  double eps = 0.5;
  double nu = 1.0;
  WalkParams walk;
  int64_t L = 2000;
  int64_t f = 64;
  int64_t H = 0;  // covering half-width; 0: (3 + 4 nu) L + 4 nu t + 64
  CoveringOptions cover;

  void validate() const {
    EnvParams{Model::SEP, rho, nu, false}.validate();
    EnvParams{Model::SEP, rho + eps, nu, false}.validate();
    walk.validate();
    if (!(eps > 0)) throw ParameterError("scale coupling: eps must be > 0");
    if (L < 1 || f < 2) throw ParameterError("scale coupling: need L >= 1 and f >= 2");
    if (f / 2 >= L) throw ParameterError("scale coupling: f/2 must be below L");
  }
};

struct ScaleCouplingResult {
  Trajectory traj1, traj2;
  int64_t t = 0;
  int64_t min_gap = 0;           // min_{s <= 2L} X2_s - X1_s
  bool G = false;
  bool G_first = false;          // eta1 <= eta2 on [-3L, 3L] x [0, L)
  bool G_second = false;         // eta1 <= eta2(. - 2t) on [-3L, 3L] x [L + t, 2L)
  int64_t order_violations = 0;  // X1 > X2 before L
  int64_t shift_violations = 0;  // on G: X1 - 2t > X2
  bool regime = false;
  std::string note;
  CouplingReport cover;
};

// X1 ~ P^{rho, L}, X2 ~ P^{rho + eps, 2L}. Before L: monotone environments,
// shared arrows. At L, eta1 is renewed and covered by eta2 shifted right by
// 2t; after L, U2(x, s) = U1(x + 2t, s), so X2 + 2t walks on the shifted
// environment with the arrows of X1.
inline ScaleCouplingResult sprinkled_scale_coupling(const ScaleCouplingParams& p, uint64_t seed) {
  p.validate();
  ScaleCouplingResult res;
  int64_t L = p.L, t = p.f / 2;
  res.t = t;
  int64_t H = p.H > 0 ? p.H : int64_t(std::ceil((3 + 4 * p.nu) * double(L) + 4 * p.nu * double(t))) + 64;
  if (H < 3 * L) throw ParameterError("scale coupling: H must cover [-3L, 3L]");
  LatticeWindow w{H + 2 * t + int64_t(std::ceil(2 * p.nu * double(t))) + 64};
  res.regime = false;
  res.note = "f is a free parameter; the admissible range of f(L) is empty at this L";

  RngStream init(derive_key(seed, {tag::coupling, 0x21}));
  RngStream evol(derive_key(seed, {tag::coupling, 0x22}));
  RngStream fresh(derive_key(seed, {tag::coupling, 0x23}));
  ArrowSource U(arrow_seed_of(seed));
  auto layers = sample_stationary_layers(Model::SEP, {p.rho, p.rho + p.eps}, w, init);
  EnvState e1 = std::move(layers[0]), e2 = std::move(layers[1]);

  int64_t x1 = 0, x2 = 0;
  res.traj1.steps.reserve(size_t(2 * L));
  res.traj2.steps.reserve(size_t(2 * L));
  res.min_gap = 0;
  auto step = [&](int which, int64_t& x, int d) {
    if (which == 1) res.traj1.steps.push_back(int8_t(d));
    else res.traj2.steps.push_back(int8_t(d));
    x += d;
  };
  int64_t dom_violations = 0;
  for (int64_t s = 0; s < L; ++s) {
    int d1 = arrow(e1.get(x1), U.u(x1, s), p.walk);
    int d2 = arrow(e2.get(x2), U.u(x2, s), p.walk);
    step(1, x1, d1);
    step(2, x2, d2);
    res.order_violations += x1 > x2;
    res.min_gap = std::min(res.min_gap, x2 - x1);
    if (s + 1 < L) dom_violations += advance_sep_layers({&e1, &e2}, p.nu, 1.0, evol, true);
  }
  res.G_first = dom_violations == 0;

  // Renewal of eta1; eta2 keeps running. The walk of X2 is followed
  // through Y = X2 + 2t on the shifted environment.
  advance_sep(e2, p.nu, 1.0, evol);
  EnvState f1(Model::SEP, w), shifted(Model::SEP, w);
  for (int64_t x = f1.lo(); x <= f1.hi(); ++x) {
    f1.set(x, fresh.uniform() < p.rho);
    shifted.set(x, e2.get(x - 2 * t));
  }
  PairedSep e(shifted, f1, p.nu);
  CoverPlan plan = covering_plan(t, p.cover);
  plan.regions = {{-H, H}};
  if (plan.stages * plan.tau > t) throw ParameterError("scale coupling: covering stages exceed t");
  res.cover.kind = "covering";
  res.cover.events["initial_band"] = e.band(-H, H, plan.mesh, p.rho + 0.75 * p.eps, p.rho + 0.25 * p.eps);
  int64_t y = x2 + 2 * t;
  int64_t s = L;
  auto walk_unit = [&]() {
    int d1 = arrow(e.low_at(x1), U.u(x1, s), p.walk);
    int d2 = arrow(e.high_at(y), U.u(y, s), p.walk);
    step(1, x1, d1);
    step(2, x2, d2);
    y += d2;
    res.min_gap = std::min(res.min_gap, x2 - x1);
    ++s;
  };
  RngStream cov(derive_key(seed, {tag::coupling, 0x24}));
  run_covering(e, plan, p.rho, p.eps, p.nu, p.cover.policy, EdgeRule::Independent, cov, res.cover.stages,
               walk_unit);
  e.set_all(EdgeRule::Shared);
  while (s < 2 * L) {
    if (s == L + t) e.watch(-3 * L, 3 * L);
    walk_unit();
    if (s < 2 * L) e.run(1, cov);
  }
  if (L + t >= 2 * L) e.watch(-3 * L, 3 * L);
  res.G_second = !e.watch_failed();
  res.G = res.G_first && res.G_second;
  auto p1 = res.traj1.positions(), p2 = res.traj2.positions();
  if (res.G)
    for (int64_t q = L; q <= 2 * L; ++q) res.shift_violations += p1[size_t(q)] - 2 * t > p2[size_t(q)];
  res.cover.events["G"] = res.G;
  res.cover.coalescence_violations = e.coalescence_violations();
  return res;
}

}  // namespace driftlab
