#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftlab/rng.hpp"

namespace driftlab {

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Walk came too close to the wrap seam of a fixed window.
class SeamBreach : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Model { SEP, PCRW };
enum class Boundary { Periodic };

inline const char* model_name(Model m) { return m == Model::SEP ? "SEP" : "PCRW"; }

struct LatticeWindow {
  int64_t half_width = 1;
  Boundary boundary = Boundary::Periodic;

  int64_t size() const { return 2 * half_width + 1; }
  void validate() const {
    if (half_width < 1) throw ParameterError("window half-width must be >= 1");
  }
};

struct EnvParams {
  Model model = Model::SEP;
  double rho = 0.5;
  double nu = 1.0;
  // Allows the frozen densities rho in {0, 1} (SEP) and rho = 0 (PCRW).
  bool boundary_mode = false;

  void validate() const {
    if (!(nu > 0) || !std::isfinite(nu)) throw ParameterError("nu must be > 0");
    if (!std::isfinite(rho)) throw ParameterError("rho must be finite");
    if (model == Model::SEP) {
      bool ok = boundary_mode ? (rho >= 0 && rho <= 1) : (rho > 0 && rho < 1);
      if (!ok) throw ParameterError("SEP requires rho in (0,1), got " + std::to_string(rho));
    } else {
      bool ok = boundary_mode ? rho >= 0 : rho > 0;
      if (!ok) throw ParameterError("PCRW requires rho > 0, got " + std::to_string(rho));
    }
  }
};

struct IntervalCount {
  int64_t a = 0, b = -1;
  int64_t count = 0;
  int64_t length() const { return b - a + 1; }
};

// ---------------------- state ----------------------

// Occupancy on the cycle of N = 2M+1 sites. Site x lives in slot x mod N, so
// the window [lo, lo+N-1] can be re-anchored (the wrap seam moved) without
// touching the other slots. Edge j joins slots j and (j+1) mod N.
class EnvState {
 public:
  EnvState() = default;
  EnvState(Model m, LatticeWindow w) : model_(m), n_(w.size()), lo_(-w.half_width) {
    w.validate();
    occ_.assign(size_t(n_), 0);
  }

  Model model() const { return model_; }
  LatticeWindow window() const { return {(n_ - 1) / 2, Boundary::Periodic}; }
  int64_t size() const { return n_; }
  int64_t lo() const { return lo_; }
  int64_t hi() const { return lo_ + n_ - 1; }
  bool contains(int64_t x) const { return x >= lo_ && x <= hi(); }

  size_t slot(int64_t x) const {
    int64_t r = x % n_;
    return size_t(r < 0 ? r + n_ : r);
  }
  // Absolute coordinate currently stored in slot s.
  int64_t site_of_slot(size_t s) const {
    int64_t off = (int64_t(s) - slot(lo_)) % n_;
    if (off < 0) off += n_;
    return lo_ + off;
  }

  uint32_t get(int64_t x) const { return occ_[slot(x)]; }
  void set(int64_t x, uint32_t v) { occ_[slot(x)] = v; }
  uint32_t operator[](int64_t x) const { return get(x); }

  std::vector<uint32_t>& slots() { return occ_; }
  const std::vector<uint32_t>& slots() const { return occ_; }

  int64_t total() const {
    int64_t s = 0;
    for (auto v : occ_) s += v;
    return s;
  }

  bool same_geometry(const EnvState& o) const { return n_ == o.n_ && lo_ == o.lo_; }

  // Moves the window to start at new_lo. Returns the sites that entered; their
  // slots still hold stale values and must be overwritten by the caller.
  std::vector<int64_t> reanchor(int64_t new_lo) {
    std::vector<int64_t> entered;
    int64_t d = new_lo - lo_;
    if (d == 0) return entered;
    int64_t new_hi = new_lo + n_ - 1;
    if (std::abs(d) >= n_) {
      for (int64_t x = new_lo; x <= new_hi; ++x) entered.push_back(x);
    } else if (d > 0) {
      for (int64_t x = hi() + 1; x <= new_hi; ++x) entered.push_back(x);
    } else {
      for (int64_t x = new_lo; x < lo_; ++x) entered.push_back(x);
    }
    lo_ = new_lo;
    return entered;
  }

  // Re-sizes to [new_lo, new_lo + 2*new_half + 1). Sites present before keep
  // their values; the returned new sites hold zero.
  std::vector<int64_t> regrow(int64_t new_lo, int64_t new_half) {
    int64_t new_n = 2 * new_half + 1;
    std::vector<uint32_t> nocc(size_t(new_n), 0);
    std::vector<int64_t> entered;
    auto nslot = [&](int64_t x) {
      int64_t r = x % new_n;
      return size_t(r < 0 ? r + new_n : r);
    };
    for (int64_t x = new_lo; x < new_lo + new_n; ++x) {
      if (contains(x))
        nocc[nslot(x)] = get(x);
      else
        entered.push_back(x);
    }
    occ_ = std::move(nocc);
    n_ = new_n;
    lo_ = new_lo;
    return entered;
  }

  double time = 0;

 private:
  Model model_ = Model::SEP;
  int64_t n_ = 3;
  int64_t lo_ = -1;
  std::vector<uint32_t> occ_ = std::vector<uint32_t>(3, 0);
};

// ---------------------- samplers ----------------------

// Poisson variates; inversion for small means, std otherwise.
class PoissonSampler {
 public:
  explicit PoissonSampler(double lambda = 0)
      : lambda_(lambda), emlam_(std::exp(-lambda)),
        kmax_(uint32_t(lambda + 40 * std::sqrt(lambda) + 40)) {}

  double mean() const { return lambda_; }

  uint32_t operator()(RngStream& rng) const {
    if (lambda_ <= 0) return 0;
    if (lambda_ < 30) {
      double u = rng.uniform(), p = emlam_, c = p;
      uint32_t k = 0;
      while (u > c) {
        ++k;
        p *= lambda_ / k;
        c += p;
        if (k >= kmax_) break;  // rounding left c just below u
      }
      return k;
    }
    std::poisson_distribution<uint64_t> d(lambda_);
    return uint32_t(d(rng));
  }

 private:
  double lambda_;
  double emlam_;
  uint32_t kmax_;
};

inline uint64_t poisson_count(double mean, RngStream& rng) {
  if (mean <= 0) return 0;
  if (mean < 30) return PoissonSampler(mean)(rng);
  std::poisson_distribution<uint64_t> d(mean);
  return d(rng);
}

// Per-site sampler of stationary values at one or more nondecreasing
// densities, coupled so that the values are sitewise nondecreasing in the
// density (low = thinned high).
class LayeredSiteSampler {
 public:
  LayeredSiteSampler() = default;
  LayeredSiteSampler(Model m, std::vector<double> rhos) : model_(m), rhos_(std::move(rhos)) {
    for (size_t i = 1; i < rhos_.size(); ++i)
      if (rhos_[i] < rhos_[i - 1]) throw ParameterError("layer densities must be nondecreasing");
    if (model_ == Model::PCRW) {
      for (size_t i = 0; i < rhos_.size(); ++i)
        inc_.emplace_back(i == 0 ? rhos_[0] : rhos_[i] - rhos_[i - 1]);
    }
  }

  size_t layers() const { return rhos_.size(); }

  template <class Out>
  void sample(RngStream& rng, Out&& out) const {
    if (model_ == Model::SEP) {
      double u = rng.uniform();
      for (size_t i = 0; i < rhos_.size(); ++i) out(i, uint32_t(u < rhos_[i]));
    } else {
      uint32_t c = 0;
      for (size_t i = 0; i < rhos_.size(); ++i) {
        c += inc_[i](rng);
        out(i, c);
      }
    }
  }

  uint32_t sample_one(RngStream& rng) const {
    uint32_t v = 0;
    sample(rng, [&](size_t i, uint32_t c) {
      if (i == 0) v = c;
    });
    return v;
  }

 private:
  Model model_ = Model::SEP;
  std::vector<double> rhos_;
  std::vector<PoissonSampler> inc_;
};

// i.i.d. Ber(rho) (SEP) or Poi(rho) (PCRW) on every site; time 0.
inline EnvState sample_stationary(const EnvParams& p, const LatticeWindow& w, RngStream& rng) {
  p.validate();
  w.validate();
  EnvState s(p.model, w);
  LayeredSiteSampler smp(p.model, {p.rho});
  for (int64_t x = s.lo(); x <= s.hi(); ++x) s.set(x, smp.sample_one(rng));
  s.time = 0;
  return s;
}

// Layers at nondecreasing densities, sitewise monotone.
inline std::vector<EnvState> sample_stationary_layers(Model m, const std::vector<double>& rhos,
                                                      const LatticeWindow& w, RngStream& rng) {
  w.validate();
  std::vector<EnvState> out(rhos.size(), EnvState(m, w));
  LayeredSiteSampler smp(m, rhos);
  for (int64_t x = out[0].lo(); x <= out[0].hi(); ++x)
    smp.sample(rng, [&](size_t i, uint32_t c) { out[i].set(x, c); });
  return out;
}

// Sturmian configuration of density d: site x holds
// floor((x+1) d + phase) - floor(x d + phase) particles, so every interval of
// length m holds floor(m d) or ceil(m d). SEP needs d <= 1.
inline EnvState banded_configuration(Model m, const LatticeWindow& w, double d, double phase = 0.0) {
  if (!(d >= 0) || (m == Model::SEP && d > 1))
    throw ParameterError("banded_configuration: density out of range");
  EnvState s(m, w);
  for (int64_t x = s.lo(); x <= s.hi(); ++x)
    s.set(x, uint32_t(std::floor(double(x + 1) * d + phase) - std::floor(double(x) * d + phase)));
  return s;
}

// ---------------------- density statistics ----------------------

inline IntervalCount interval_count(const EnvState& s, int64_t a, int64_t b) {
  IntervalCount r{a, b, 0};
  if (b < a) return r;
  if (b - a + 1 > s.size()) throw ParameterError("interval longer than the window");
  for (int64_t x = a; x <= b; ++x) r.count += s.get(x);
  return r;
}

enum class BalanceClause { None = 0, Domination = 1, HighDensity = 2, LowDensity = 3 };

struct BalanceResult {
  bool ok = true;
  BalanceClause clause = BalanceClause::None;
  int64_t where = 0;  // failing site (clause i) or left end of failing interval
};

// (i) high >= low on [-M, M]; (ii) every length-mesh subinterval has
// high-count >= (rho + 99 eps/100) mesh; (iii) low-count <= (rho + eps/100) mesh.
inline BalanceResult check_balanced(const EnvState& high, const EnvState& low, int64_t M,
                                    int64_t mesh, double rho, double eps) {
  if (!high.same_geometry(low) || high.model() != low.model())
    throw ParameterError("check_balanced: window mismatch");
  if (mesh < 1) throw ParameterError("check_balanced: mesh must be >= 1");
  if (2 * M + 1 > high.size()) throw ParameterError("check_balanced: M exceeds the window");
  for (int64_t x = -M; x <= M; ++x)
    if (high.get(x) < low.get(x)) return {false, BalanceClause::Domination, x};
  if (mesh > 2 * M + 1) return {};
  double hi_min = (rho + 0.99 * eps) * double(mesh);
  double lo_max = (rho + 0.01 * eps) * double(mesh);
  int64_t ch = 0, cl = 0;
  for (int64_t x = -M; x < -M + mesh; ++x) {
    ch += high.get(x);
    cl += low.get(x);
  }
  int64_t bad_low = INT64_MIN;
  for (int64_t a = -M;; ++a) {
    if (double(ch) < hi_min) return {false, BalanceClause::HighDensity, a};
    if (bad_low == INT64_MIN && double(cl) > lo_max) bad_low = a;
    if (a + mesh > M) break;
    ch += int64_t(high.get(a + mesh)) - int64_t(high.get(a));
    cl += int64_t(low.get(a + mesh)) - int64_t(low.get(a));
  }
  if (bad_low != INT64_MIN) return {false, BalanceClause::LowDensity, bad_low};
  return {};
}

// ---------------------- tail bounds ----------------------

enum class BoundKind { PoissonUpper, PoissonLower, BinomialUpper, BinomialLower };

struct BoundParams {
  double lambda = 0;  // Poisson mean
  double x = 0;       // Poisson deviation
  double m = 0;       // binomial trials
  double q = 0;       // binomial deviation
  std::optional<double> p;  // binomial success probability, range-checks q when given
};

inline double concentration_bound(BoundKind k, const BoundParams& b) {
  switch (k) {
    case BoundKind::PoissonUpper:
      if (!(b.lambda > 0) || b.x < 0) throw ParameterError("PoissonUpper needs lambda > 0, x >= 0");
      return std::exp(-b.x * b.x / (2 * (b.lambda + b.x)));
    case BoundKind::PoissonLower:
      if (!(b.lambda > 0) || b.x < 0 || b.x > b.lambda)
        throw ParameterError("PoissonLower needs lambda > 0, x in [0, lambda]");
      return std::exp(-b.x * b.x / (2 * (b.lambda + b.x)));
    case BoundKind::BinomialUpper:
      if (b.m < 1 || !(b.q > 0) || (b.p && !(b.q < 1 - *b.p)) || b.q >= 1)
        throw ParameterError("BinomialUpper needs m >= 1, q in (0, 1-p)");
      return std::exp(-b.m * b.q * b.q / 3);
    case BoundKind::BinomialLower:
      if (b.m < 1 || !(b.q > 0) || (b.p && !(b.q < *b.p)) || b.q >= 1)
        throw ParameterError("BinomialLower needs m >= 1, q in (0, p)");
      return std::exp(-b.m * b.q * b.q / 2);
  }
  return 1;
}

}  // namespace driftlab
