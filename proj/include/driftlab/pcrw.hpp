#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "driftlab/env.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

inline void require_pcrw(const EnvState& s, const char* who) {
  if (s.model() != Model::PCRW) throw ParameterError(std::string(who) + ": not a PCRW state");
}

// 2-bit draws for lazy steps: 0 -> left, 1 -> right, 2,3 -> stay.
class LazyMoves {
 public:
  explicit LazyMoves(RngStream& rng) : rng_(rng) {}
  int next() {
    if (left_ == 0) {
      word_ = rng_();
      left_ = 32;
    }
    int b = int(word_ & 3);
    word_ >>= 2;
    --left_;
    return b == 0 ? -1 : (b == 1 ? 1 : 0);
  }

 private:
  RngStream& rng_;
  uint64_t word_ = 0;
  int left_ = 0;
};

// One lazy step for several layers on a shared geometry. At each site the
// first min(c_l) particles of every layer share their moves; the k-th
// particle of any layer uses the k-th draw, so surplus particles move
// independently and each layer is marginally a PCRW.
inline void pcrw_step_layers(const std::vector<EnvState*>& layers, RngStream& rng,
                             std::vector<std::vector<uint32_t>>& scratch) {
  size_t L = layers.size();
  int64_t n = layers[0]->size();
  scratch.resize(L);
  for (auto& v : scratch) v.assign(size_t(n), 0);
  LazyMoves mv(rng);
  std::vector<int> draws;
  for (int64_t s = 0; s < n; ++s) {
    uint32_t cmax = 0;
    for (size_t l = 0; l < L; ++l) cmax = std::max(cmax, layers[l]->slots()[size_t(s)]);
    if (cmax == 0) continue;
    draws.resize(cmax);
    for (auto& d : draws) d = mv.next();
    size_t left = size_t(s == 0 ? n - 1 : s - 1), right = size_t(s + 1 == n ? 0 : s + 1);
    for (size_t l = 0; l < L; ++l) {
      uint32_t c = layers[l]->slots()[size_t(s)];
      auto& out = scratch[l];
      for (uint32_t k = 0; k < c; ++k) {
        int d = draws[k];
        if (d < 0)
          out[left]++;
        else if (d > 0)
          out[right]++;
        else
          out[size_t(s)]++;
      }
    }
  }
  for (size_t l = 0; l < L; ++l) layers[l]->slots().swap(scratch[l]);
}

inline void advance_pcrw(EnvState& s, int64_t steps, RngStream& rng) {
  require_pcrw(s, "advance_pcrw");
  if (steps < 0) throw ParameterError("advance_pcrw: negative steps");
  int64_t n = s.size();
  std::vector<uint32_t> nxt(static_cast<size_t>(n));
  for (int64_t t = 0; t < steps; ++t) {
    std::fill(nxt.begin(), nxt.end(), 0);
    LazyMoves mv(rng);
    const auto& cur = s.slots();
    for (int64_t i = 0; i < n; ++i) {
      uint32_t c = cur[size_t(i)];
      if (!c) continue;
      size_t left = size_t(i == 0 ? n - 1 : i - 1), right = size_t(i + 1 == n ? 0 : i + 1);
      for (uint32_t k = 0; k < c; ++k) {
        int d = mv.next();
        if (d < 0)
          nxt[left]++;
        else if (d > 0)
          nxt[right]++;
        else
          nxt[size_t(i)]++;
      }
    }
    s.slots().swap(nxt);
  }
  s.time += double(steps);
}

inline EnvState evolve_pcrw(EnvState s, int64_t steps, RngStream& rng) {
  advance_pcrw(s, steps, rng);
  return s;
}

// Returns sitewise violations of layer order after each step when `check`.
inline int64_t advance_pcrw_layers(const std::vector<EnvState*>& layers, int64_t steps,
                                   RngStream& rng, bool check = false) {
  if (layers.empty()) return 0;
  for (auto* l : layers) {
    require_pcrw(*l, "advance_pcrw_layers");
    if (!l->same_geometry(*layers[0])) throw ParameterError("advance_pcrw_layers: geometry mismatch");
  }
  if (steps < 0) throw ParameterError("advance_pcrw_layers: negative steps");
  std::vector<std::vector<uint32_t>> scratch;
  int64_t violations = 0;
  for (int64_t t = 0; t < steps; ++t) {
    pcrw_step_layers(layers, rng, scratch);
    if (check) {
      for (size_t l = 1; l < layers.size(); ++l) {
        auto& a = layers[l - 1]->slots();
        auto& b = layers[l]->slots();
        for (size_t i = 0; i < a.size(); ++i) violations += a[i] > b[i];
      }
    }
  }
  for (auto* l : layers) l->time += double(steps);
  return violations;
}

struct CoupledPcrw {
  EnvState low;
  EnvState high;
  int64_t violations = 0;
};

inline CoupledPcrw monotone_coupled_evolve_pcrw(EnvState low, EnvState high, int64_t steps,
                                                RngStream& rng) {
  require_pcrw(low, "monotone_coupled_evolve_pcrw");
  require_pcrw(high, "monotone_coupled_evolve_pcrw");
  if (!low.same_geometry(high)) throw ParameterError("monotone_coupled_evolve_pcrw: geometry mismatch");
  for (size_t i = 0; i < low.slots().size(); ++i)
    if (low.slots()[i] > high.slots()[i])
      throw ParameterError("monotone_coupled_evolve_pcrw: low is not <= high");
  CoupledPcrw r{std::move(low), std::move(high), 0};
  r.violations = advance_pcrw_layers({&r.low, &r.high}, steps, rng, true);
  return r;
}

// ---------------------- heat kernel ----------------------

// Exact q_t(0, dx) = num / 4^t via iterated convolution with (1, 2, 1);
// valid for t <= 64 (numerators fit in 128 bits).
inline unsigned __int128 lazy_heat_kernel_numerator(int64_t t, int64_t dx) {
  if (t < 0 || t > 64) throw ParameterError("exact heat kernel needs 0 <= t <= 64");
  if (std::abs(dx) > t) return 0;
  std::vector<unsigned __int128> row(size_t(2 * t + 3), 0);
  int64_t c = t + 1;  // index of dx = 0
  row[size_t(c)] = 1;
  std::vector<unsigned __int128> nxt(row.size());
  for (int64_t s = 0; s < t; ++s) {
    std::fill(nxt.begin(), nxt.end(), 0);
    for (size_t i = 1; i + 1 < row.size(); ++i) nxt[i] = row[i - 1] + 2 * row[i] + row[i + 1];
    row.swap(nxt);
  }
  return row[size_t(c + dx)];
}

// Full row q_t(0, -t..t) by floating convolution.
inline std::vector<double> lazy_heat_kernel_row(int64_t t) {
  if (t < 0) throw ParameterError("heat kernel needs t >= 0");
  std::vector<double> row(size_t(2 * t + 3), 0.0), nxt(row.size());
  row[size_t(t + 1)] = 1;
  for (int64_t s = 0; s < t; ++s) {
    std::fill(nxt.begin(), nxt.end(), 0.0);
    for (size_t i = 1; i + 1 < row.size(); ++i)
      nxt[i] = 0.25 * row[i - 1] + 0.5 * row[i] + 0.25 * row[i + 1];
    row.swap(nxt);
  }
  return std::vector<double>(row.begin() + 1, row.end() - 1);
}

inline double lazy_heat_kernel(int64_t t, int64_t dx) {
  if (t < 0) throw ParameterError("heat kernel needs t >= 0");
  dx = std::abs(dx);
  if (dx > t) return 0.0;
  if (t <= 64) return std::ldexp(double(lazy_heat_kernel_numerator(t, dx)), int(-2 * t));
  // Beyond the exact range: C(2t, t)/4^t as a product of (2i-1)/(2i), then
  // the ratios q(k+1)/q(k) = (t-k)/(t+k+1).
  double q = 1;
  for (int64_t i = 1; i <= t; ++i) q *= double(2 * i - 1) / double(2 * i);
  for (int64_t k = 0; k < dx; ++k) q *= double(t - k) / double(t + k + 1);
  return q;
}

// Kernel row truncated where q_t < floor (far tail, never selected).
// Cached per thread.
inline const std::pair<int64_t, std::vector<double>>& lazy_heat_kernel_support(int64_t t,
                                                                               double floor = 1e-18) {
  thread_local std::unordered_map<int64_t, std::pair<int64_t, std::vector<double>>> cache;
  auto key = t * 64 + int64_t(-std::log10(floor));
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  std::vector<double> row;
  if (t <= 4096) {
    row = lazy_heat_kernel_row(t);
  } else {
    row.resize(size_t(2 * t + 1));
    for (int64_t d = -t; d <= t; ++d) row[size_t(d + t)] = lazy_heat_kernel(t, d);
  }
  int64_t r = t;
  while (r > 0 && row[size_t(t + r)] < floor) --r;
  return cache[key] = {r, std::vector<double>(row.begin() + (t - r), row.begin() + (t + r + 1))};
}

// ---------------------- soft local times ----------------------

struct SoftLocalTimeField {
  int64_t zlo = 0, zhi = -1;
  std::vector<double> G;        // G(z) for z in [zlo, zhi]
  std::vector<uint32_t> h;      // particles placed at z
  std::vector<double> xi;       // mark per particle, in input order
  std::vector<int64_t> landing; // site chosen for each particle
};

// Poisson points on one column {z} x R+, heights in increasing order.
class PoissonColumn {
 public:
  PoissonColumn(uint64_t seed, int64_t z) : rng_(derive_key(seed, {tag::coupling, 0x51, uint64_t(z)})) {
    next_ = rng_.exponential();
  }
  double next_height() const { return next_; }
  void consume() { next_ += rng_.exponential(); }

 private:
  RngStream rng_;
  double next_;
};

inline int64_t column_count_below(uint64_t seed, int64_t z, double level) {
  PoissonColumn c(seed, z);
  int64_t k = 0;
  while (c.next_height() <= level) {
    ++k;
    c.consume();
  }
  return k;
}

// Soft local times for lazy walks from `positions` after t steps. Particle i
// pushes G up by xi_i q_t(x_i, .) until it touches the lowest unused point;
// that point's column is the particle's position at time t.
inline SoftLocalTimeField soft_local_time(const std::vector<int64_t>& positions, int64_t t,
                                          int64_t zlo, int64_t zhi, uint64_t seed) {
  if (t < 1) throw ParameterError("soft_local_time needs t >= 1");
  SoftLocalTimeField f;
  f.zlo = zlo;
  f.zhi = zhi;
  if (zhi >= zlo) {
    f.G.assign(size_t(zhi - zlo + 1), 0.0);
    f.h.assign(size_t(zhi - zlo + 1), 0);
  }
  if (positions.empty()) return f;
  const auto& [r, ker] = lazy_heat_kernel_support(t);
  int64_t xmin = *std::min_element(positions.begin(), positions.end());
  int64_t xmax = *std::max_element(positions.begin(), positions.end());
  int64_t base = xmin - r, span = xmax + r - base + 1;
  std::vector<double> G(size_t(span), 0.0);
  std::vector<PoissonColumn> cols;
  cols.reserve(size_t(span));
  for (int64_t i = 0; i < span; ++i) cols.emplace_back(seed, base + i);
  f.xi.reserve(positions.size());
  for (int64_t x : positions) {
    size_t o = size_t(x - r - base);
    double best = std::numeric_limits<double>::infinity();
    size_t arg = 0;
    for (size_t k = 0; k < ker.size(); ++k) {
      double v = (cols[o + k].next_height() - G[o + k]) / ker[k];
      if (v < best) {
        best = v;
        arg = k;
      }
    }
    if (best < 0) best = 0;  // rounding in a near tie
    for (size_t k = 0; k < ker.size(); ++k) G[o + k] += best * ker[k];
    // The touched point is exactly on G now; keep G at its height.
    G[o + arg] = cols[o + arg].next_height();
    cols[o + arg].consume();
    f.xi.push_back(best);
    int64_t z = base + int64_t(o + arg);
    f.landing.push_back(z);
    if (z >= zlo && z <= zhi) f.h[size_t(z - zlo)]++;
  }
  for (int64_t z = std::max(zlo, base); z <= std::min(zhi, base + span - 1); ++z)
    f.G[size_t(z - zlo)] = G[size_t(z - base)];
  return f;
}

// ---------------------- Poisson sandwich ----------------------

struct SandwichResult {
  int64_t zlo = 0, zhi = -1;      // the control interval [t, H - t]
  std::vector<uint32_t> low;      // Poi(rho - eps) per site
  std::vector<uint32_t> evolved;  // PCRW at time t
  std::vector<uint32_t> high;     // Poi(rho + eps) per site
  bool sandwich = false;          // low <= evolved <= high on [t, H - t]
  bool regime = false;            // 4 l^2 < t < H/2
  int64_t first_violation = 0;
};

// eta0[i] = particles at site i in [0, H]. Every length-l subinterval must
// satisfy (rho - eps/2) l <= count <= (rho + eps/2) l.
inline SandwichResult poisson_sandwich_coupling(const std::vector<uint32_t>& eta0, double rho,
                                                double eps, int64_t t, int64_t ell, uint64_t seed) {
  if (!(eps > 0) || !(rho - eps > 0)) throw ParameterError("sandwich needs 0 < eps < rho");
  if (ell < 1 || t < 1) throw ParameterError("sandwich needs l >= 1, t >= 1");
  int64_t H = int64_t(eta0.size()) - 1;
  if (H + 1 < ell) throw ParameterError("sandwich: [0,H] shorter than l");
  int64_t c = 0;
  for (int64_t i = 0; i < ell; ++i) c += eta0[size_t(i)];
  for (int64_t a = 0;; ++a) {
    if (double(c) < (rho - eps / 2) * double(ell) || double(c) > (rho + eps / 2) * double(ell))
      throw ParameterError("sandwich: density band violated at " + std::to_string(a));
    if (a + ell > H) break;
    c += int64_t(eta0[size_t(a + ell)]) - int64_t(eta0[size_t(a)]);
  }
  SandwichResult r;
  r.zlo = t;
  r.zhi = H - t;
  r.regime = 4.0 * double(ell) * double(ell) < double(t) && 2 * t < H;
  std::vector<int64_t> pos;
  for (int64_t x = 0; x <= H; ++x)
    for (uint32_t k = 0; k < eta0[size_t(x)]; ++k) pos.push_back(x);
  auto f = soft_local_time(pos, t, r.zlo, r.zhi, seed);
  r.evolved = f.h;
  r.sandwich = true;
  for (int64_t z = r.zlo; z <= r.zhi; ++z) {
    uint32_t lo = uint32_t(column_count_below(seed, z, rho - eps));
    uint32_t hi = uint32_t(column_count_below(seed, z, rho + eps));
    r.low.push_back(lo);
    r.high.push_back(hi);
    uint32_t e = f.h[size_t(z - r.zlo)];
    if (r.sandwich && !(lo <= e && e <= hi)) {
      r.sandwich = false;
      r.first_violation = z;
    }
  }
  return r;
}

}  // namespace driftlab
