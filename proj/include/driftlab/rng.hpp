#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace driftlab {

// ---------------------- hashing ----------------------

inline constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Key for a named sub-stream. Tags are mixed in order, so (a, b) != (b, a).
inline constexpr uint64_t derive_key(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t h = splitmix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x3C6EF372FE94F82BULL));
  return h;
}

// Domain tags, kept distinct so streams never collide across uses.
namespace tag {
inline constexpr uint64_t arrows = 0xA1;
inline constexpr uint64_t env_init = 0xB1;
inline constexpr uint64_t env_evolve = 0xB2;
inline constexpr uint64_t env_fresh = 0xB3;
inline constexpr uint64_t renewal = 0xB4;
inline constexpr uint64_t edge_clock = 0xC1;
inline constexpr uint64_t coupling = 0xD1;
inline constexpr uint64_t replication = 0xE1;
inline constexpr uint64_t probe = 0xE2;
}  // namespace tag

// ---------------------- Philox4x32-10 ----------------------

struct Philox4x32 {
  using ctr_t = std::array<uint32_t, 4>;
  using key_t = std::array<uint32_t, 2>;

  static constexpr uint32_t M0 = 0xD2511F53, M1 = 0xCD9E8D57;
  static constexpr uint32_t W0 = 0x9E3779B9, W1 = 0xBB67AE85;

  static inline void round(ctr_t& c, const key_t& k) {
    uint64_t p0 = uint64_t(M0) * c[0];
    uint64_t p1 = uint64_t(M1) * c[2];
    ctr_t r{uint32_t(p1 >> 32) ^ c[1] ^ k[0], uint32_t(p1), uint32_t(p0 >> 32) ^ c[3] ^ k[1],
            uint32_t(p0)};
    c = r;
  }

  static inline ctr_t block(ctr_t c, key_t k) {
    for (int i = 0; i < 9; ++i) {
      round(c, k);
      k[0] += W0;
      k[1] += W1;
    }
    round(c, k);
    return c;
  }
};

inline double to_unit(uint64_t r) { return double(r >> 11) * 0x1.0p-53; }

// ---------------------- streams ----------------------

// Counter-based stream: output i is splitmix64(key + splitmix64(i)), a pure
// function of (key, i). Distinct keys give unrelated sequences (no shifted
// overlap as with a plain Weyl sequence). Satisfies UniformRandomBitGenerator
// so std distributions can consume it.
class RngStream {
 public:
  using result_type = uint64_t;

  explicit RngStream(uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<uint64_t>::max(); }

  uint64_t key() const { return key_; }
  uint64_t position() const { return ctr_; }

  RngStream split(uint64_t t) const { return RngStream(derive_key(key_, {t})); }
  RngStream split(uint64_t t1, uint64_t t2) const { return RngStream(derive_key(key_, {t1, t2})); }

  result_type operator()() { return splitmix64(key_ + splitmix64(ctr_++)); }

  double uniform() { return to_unit((*this)()); }

  // In (0,1]; safe for log().
  double uniform_pos() { return 1.0 - uniform(); }

  // Uniform on [0, n). Multiply-shift; bias <= n / 2^64.
  uint64_t below(uint64_t n) {
    return uint64_t((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  bool coin() { return (*this)() >> 63; }

  double exponential(double rate = 1.0) { return -std::log(uniform_pos()) / rate; }

 private:
  uint64_t key_;
  uint64_t ctr_ = 0;
};

// ---------------------- arrow field ----------------------

// U_w for w = (x, n): one Philox block keyed by the seed, counter = (x, n).
// Pure in (seed, x, n); nothing else ever reads these values.
class ArrowSource {
 public:
  explicit ArrowSource(uint64_t seed = 0) : seed_(seed), key_(derive_key(seed, {tag::arrows})) {}

  uint64_t seed() const { return seed_; }

  double u(int64_t x, int64_t n) const {
    auto ux = uint64_t(x), un = uint64_t(n);
    Philox4x32::ctr_t c{uint32_t(ux), uint32_t(ux >> 32), uint32_t(un), uint32_t(un >> 32)};
    Philox4x32::key_t k{uint32_t(key_), uint32_t(key_ >> 32)};
    auto r = Philox4x32::block(c, k);
    return to_unit((uint64_t(r[0]) << 32) | r[1]);
  }

 private:
  uint64_t seed_;
  uint64_t key_;
};

}  // namespace driftlab
