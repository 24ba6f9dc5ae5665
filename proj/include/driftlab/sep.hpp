#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "driftlab/env.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

// Two clock arrivals at the same float time.
class TieAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_sep(const EnvState& s, const char* who) {
  if (s.model() != Model::SEP) throw ParameterError(std::string(who) + ": not a SEP state");
}

// ---------------------- aggregate event kernel ----------------------

// Interchange dynamics on the ring: each of the N edges rings at rate nu/2.
// Over a duration d the number of events is Poi(N nu d / 2) and, in time
// order, the edges are i.i.d. uniform; only the order matters for the state.
inline uint64_t sep_event_count(int64_t n_sites, double nu, double duration, RngStream& rng) {
  return poisson_count(0.5 * nu * double(n_sites) * duration, rng);
}

// Exact uniform draws on [0, n) for n < 2^32, two per 64-bit output
// (Lemire's multiply-shift with rejection).
class EdgePicker {
 public:
  explicit EdgePicker(uint64_t n) : n_(uint32_t(n)), thr_(uint32_t(-uint32_t(n)) % uint32_t(n)) {
    if (n == 0 || n > 0xFFFFFFFFull) throw ParameterError("EdgePicker: n out of range");
  }
  uint64_t operator()(RngStream& rng) {
    for (;;) {
      if (!have_) {
        word_ = rng();
        have_ = 2;
      }
      uint32_t x = uint32_t(word_);
      word_ >>= 32;
      --have_;
      uint64_t m = uint64_t(x) * n_;
      if (uint32_t(m) >= thr_) return m >> 32;
    }
  }

 private:
  uint32_t n_, thr_;
  uint64_t word_ = 0;
  int have_ = 0;
};

inline void advance_sep(EnvState& s, double nu, double duration, RngStream& rng) {
  require_sep(s, "advance_sep");
  if (duration < 0) throw ParameterError("advance_sep: negative duration");
  if (duration == 0) return;
  uint64_t n = uint64_t(s.size());
  uint32_t* o = s.slots().data();
  uint64_t k = sep_event_count(s.size(), nu, duration, rng);
  EdgePicker pick(n);
  for (uint64_t i = 0; i < k; ++i) {
    uint64_t j = pick(rng);
    uint64_t j2 = j + 1 == n ? 0 : j + 1;
    std::swap(o[j], o[j2]);
  }
  s.time += duration;
}

inline EnvState evolve_sep(EnvState s, double nu, double duration, RngStream& rng) {
  advance_sep(s, nu, duration, rng);
  return s;
}

// Same clock realization applied to every layer. Returns the number of
// domination violations seen at swapped slots when `check` is set (layers
// must then be given in nondecreasing order).
inline int64_t advance_sep_layers(const std::vector<EnvState*>& layers, double nu, double duration,
                                  RngStream& rng, bool check = false) {
  if (layers.empty() || duration == 0) return 0;
  for (auto* l : layers) {
    require_sep(*l, "advance_sep_layers");
    if (!l->same_geometry(*layers[0])) throw ParameterError("advance_sep_layers: geometry mismatch");
  }
  if (duration < 0) throw ParameterError("advance_sep_layers: negative duration");
  uint64_t n = uint64_t(layers[0]->size());
  uint64_t k = sep_event_count(layers[0]->size(), nu, duration, rng);
  int64_t violations = 0;
  EdgePicker pick(n);
  if (layers.size() == 1) {
    uint32_t* o = layers[0]->slots().data();
    for (uint64_t i = 0; i < k; ++i) {
      uint64_t j = pick(rng);
      uint64_t j2 = j + 1 == n ? 0 : j + 1;
      std::swap(o[j], o[j2]);
    }
  } else if (layers.size() == 2 && !check) {
    uint32_t* a = layers[0]->slots().data();
    uint32_t* b = layers[1]->slots().data();
    for (uint64_t i = 0; i < k; ++i) {
      uint64_t j = pick(rng);
      uint64_t j2 = j + 1 == n ? 0 : j + 1;
      std::swap(a[j], a[j2]);
      std::swap(b[j], b[j2]);
    }
  } else {
    std::vector<uint32_t*> ptr;
    for (auto* l : layers) ptr.push_back(l->slots().data());
    for (uint64_t i = 0; i < k; ++i) {
      uint64_t j = pick(rng);
      uint64_t j2 = j + 1 == n ? 0 : j + 1;
      for (auto* o : ptr) std::swap(o[j], o[j2]);
      if (check) {
        for (size_t l = 1; l < ptr.size(); ++l)
          violations += (ptr[l - 1][j] > ptr[l][j]) + (ptr[l - 1][j2] > ptr[l][j2]);
      }
    }
  }
  for (auto* l : layers) l->time += duration;
  return violations;
}

inline bool dominated(const EnvState& low, const EnvState& high) {
  if (!low.same_geometry(high)) return false;
  auto& a = low.slots();
  auto& b = high.slots();
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] > b[i]) return false;
  return true;
}

struct CoupledPair {
  EnvState low;
  EnvState high;
  int64_t violations = 0;
};

// Shared-clock evolution of low <= high. Domination is rechecked at both
// endpoints of every event.
inline CoupledPair monotone_coupled_evolve(EnvState low, EnvState high, double nu, double duration,
                                           RngStream& rng) {
  require_sep(low, "monotone_coupled_evolve");
  require_sep(high, "monotone_coupled_evolve");
  if (!dominated(low, high)) throw ParameterError("monotone_coupled_evolve: low is not <= high");
  CoupledPair r{std::move(low), std::move(high), 0};
  r.violations = advance_sep_layers({&r.low, &r.high}, nu, duration, rng, true);
  return r;
}

// ---------------------- per-edge keyed clocks ----------------------

// Arrival times of one edge clock. Arrivals inside [e, e+1) are a pure
// function of (seed, edge, e): Poi(rate) points placed uniformly.
class EdgeClockStream {
 public:
  EdgeClockStream(uint64_t seed, int64_t edge, double rate, double start = 0)
      : seed_(seed), edge_(edge), rate_(rate) {
    if (!(rate > 0)) throw ParameterError("EdgeClockStream: rate must be > 0");
    epoch_ = int64_t(std::floor(start));
    load();
    while (idx_ < buf_.size() && buf_[idx_] <= start) ++idx_;
  }

  int64_t edge() const { return edge_; }
  double rate() const { return rate_; }

  double peek() {
    while (idx_ >= buf_.size()) {
      ++epoch_;
      load();
    }
    return buf_[idx_];
  }
  double next() {
    double t = peek();
    ++idx_;
    return t;
  }

 private:
  void load() {
    RngStream r(derive_key(seed_, {tag::edge_clock, uint64_t(edge_), uint64_t(epoch_)}));
    uint64_t k = poisson_count(rate_, r);
    buf_.resize(k);
    for (auto& t : buf_) t = double(epoch_) + r.uniform();
    std::sort(buf_.begin(), buf_.end());
    idx_ = 0;
  }

  uint64_t seed_;
  int64_t edge_;
  double rate_;
  int64_t epoch_ = 0;
  std::vector<double> buf_;
  size_t idx_ = 0;
};

// Interchange evolution driven by per-edge keyed clocks; edge x joins x and
// x+1 (x = hi is the seam edge). Result depends only on (seed, state,
// interval), so evolving in pieces equals evolving at once. Ties abort.
inline void advance_sep_keyed(EnvState& s, double nu, double duration, uint64_t seed) {
  require_sep(s, "advance_sep_keyed");
  if (duration < 0) throw ParameterError("advance_sep_keyed: negative duration");
  double t0 = s.time, t1 = s.time + duration;
  using Item = std::pair<double, int64_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  std::vector<EdgeClockStream> clocks;
  clocks.reserve(size_t(s.size()));
  for (int64_t x = s.lo(); x <= s.hi(); ++x) {
    clocks.emplace_back(seed, x, nu / 2, t0);
    pq.push({clocks.back().peek(), x - s.lo()});
  }
  double last = -1;
  while (!pq.empty() && pq.top().first <= t1) {
    auto [t, i] = pq.top();
    pq.pop();
    if (t == last) throw TieAbort("advance_sep_keyed: simultaneous clock arrivals");
    last = t;
    int64_t x = s.lo() + i;
    int64_t y = x == s.hi() ? s.lo() : x + 1;
    uint32_t a = s.get(x), b = s.get(y);
    s.set(x, b);
    s.set(y, a);
    clocks[size_t(i)].next();
    pq.push({clocks[size_t(i)].peek(), i});
  }
  s.time = t1;
}

// ---------------------- tagged particles ----------------------

struct InterchangeTrace {
  std::vector<int64_t> initial;                  // labeled sites
  std::vector<double> sample_times;              // relative to the start
  std::vector<std::vector<int64_t>> positions;   // [label][sample], unwrapped
  std::vector<int64_t> jumps;                    // per label
  std::vector<int64_t> max_abs_displacement;     // per label, over the run
};

struct TracedResult {
  EnvState state;
  InterchangeTrace trace;
};

// As advance_sep, following the contents of labeled sites. Positions are
// unwrapped across the seam (start + net displacement).
inline TracedResult evolve_interchange_traced(EnvState s, double nu, double duration, RngStream& rng,
                                              const std::vector<int64_t>& labels,
                                              std::vector<double> sample_times = {}) {
  require_sep(s, "evolve_interchange_traced");
  if (duration < 0) throw ParameterError("evolve_interchange_traced: negative duration");
  std::sort(sample_times.begin(), sample_times.end());
  for (double t : sample_times)
    if (t < 0 || t > duration) throw ParameterError("sample time outside [0, duration]");
  uint64_t n = uint64_t(s.size());
  std::vector<int32_t> who(n, -1);
  InterchangeTrace tr;
  tr.initial = labels;
  tr.sample_times = sample_times;
  std::vector<int64_t> disp(labels.size(), 0);
  std::vector<size_t> at(labels.size());
  for (size_t l = 0; l < labels.size(); ++l) {
    if (!s.contains(labels[l]) || s.get(labels[l]) == 0)
      throw ParameterError("evolve_interchange_traced: label on an empty site");
    size_t sl = s.slot(labels[l]);
    if (who[sl] != -1) throw ParameterError("evolve_interchange_traced: duplicate label");
    who[sl] = int32_t(l);
    at[l] = sl;
  }
  tr.positions.assign(labels.size(), {});
  tr.jumps.assign(labels.size(), 0);
  tr.max_abs_displacement.assign(labels.size(), 0);
  uint32_t* o = s.slots().data();
  double rate = 0.5 * nu * double(n);
  double t = 0;
  size_t next_sample = 0;
  auto record_until = [&](double tt) {
    while (next_sample < sample_times.size() && sample_times[next_sample] <= tt) {
      for (size_t l = 0; l < labels.size(); ++l) tr.positions[l].push_back(labels[l] + disp[l]);
      ++next_sample;
    }
  };
  for (;;) {
    double dt = rng.exponential(rate);
    if (t + dt > duration) break;
    record_until(t + dt);  // samples up to this event see the pre-event state
    t += dt;
    uint64_t j = rng.below(n);
    uint64_t j2 = j + 1 == n ? 0 : j + 1;
    std::swap(o[j], o[j2]);
    int32_t a = who[j], b = who[j2];
    who[j] = b;
    who[j2] = a;
    if (a >= 0) {
      at[size_t(a)] = j2;
      disp[size_t(a)] += 1;
      tr.jumps[size_t(a)]++;
      tr.max_abs_displacement[size_t(a)] =
          std::max(tr.max_abs_displacement[size_t(a)], std::abs(disp[size_t(a)]));
    }
    if (b >= 0) {
      at[size_t(b)] = j;
      disp[size_t(b)] -= 1;
      tr.jumps[size_t(b)]++;
      tr.max_abs_displacement[size_t(b)] =
          std::max(tr.max_abs_displacement[size_t(b)], std::abs(disp[size_t(b)]));
    }
  }
  record_until(duration);
  s.time += duration;
  return {std::move(s), std::move(tr)};
}

// ---------------------- drift bound ----------------------

struct DisplacementCheck {
  double threshold = 0;  // 2 k nu t + a
  double bound = 0;      // exp(-(2 k nu t + a) / 8)
  double empirical = 0;
  double se = 0;
  int64_t reps = 0;
  bool pass = false;
};

// Frequency of max_{s<=t} |Z_s| >= 2k nu t + a for a tagged particle,
// against the bound exp(-(2k nu t + a)/8).
inline DisplacementCheck max_displacement_bound_check(int64_t k, double t, int64_t a, int64_t reps,
                                                      RngStream rng, double nu = 1.0) {
  if (k < 1 || !(t > 0) || a < 0 || reps < 1)
    throw ParameterError("max_displacement_bound_check: need k >= 1, t > 0, a >= 0");
  DisplacementCheck r;
  r.threshold = 2.0 * double(k) * nu * t + double(a);
  r.bound = std::exp(-r.threshold / 8);
  r.reps = reps;
  int64_t hits = 0;
  // The unwrapped displacement of a lone tagged particle does not depend on
  // the window size, so a small ring suffices.
  EnvState base(Model::SEP, LatticeWindow{8});
  base.set(0, 1);
  for (int64_t i = 0; i < reps; ++i) {
    RngStream ri = rng.split(tag::replication, uint64_t(i));
    auto res = evolve_interchange_traced(base, nu, t, ri, {0});
    if (double(res.trace.max_abs_displacement[0]) >= r.threshold) ++hits;
  }
  r.empirical = double(hits) / double(reps);
  r.se = std::sqrt(r.empirical * (1 - r.empirical) / double(reps));
  r.pass = r.empirical <= r.bound + 3 * r.se;
  return r;
}

}  // namespace driftlab
