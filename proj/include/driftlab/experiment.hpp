#pragma once

#include <boost/math/distributions/poisson.hpp>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/couplings.hpp"
#include "driftlab/density.hpp"
#include "driftlab/estimators.hpp"

namespace driftlab {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"speed", "theta", "backtrack", "vl",
                                          "rho-c", "coupling-test", "env-check", "scan"};
  return s;
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> c{"schema_version", "subcommand", "model", "rho",   "nu",     "p_bullet",
                                          "p_circ",         "L",          "n",     "reps",  "seed",   "estimate",
                                          "stderr",         "ci_lo",      "ci_hi", "aux"};
  return c;
}

// Invalid configuration; `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line) : std::runtime_error(msg), line(line) {}
  int line;
};

// Raised when a gate threshold of env-check or coupling-test is missed.
class GateFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string subcommand;
  Model model = Model::SEP;
  std::vector<double> rhos{0.5};
  double nu = 1.0;
  double p_bullet = 0.7;
  double p_circ = 0.3;
  std::optional<int64_t> L;  // empty: infinite range
  int64_t n = 1000;
  int64_t reps = 100;
  uint64_t seed = 1;
  double tol = 0.05;
  bool boundary_mode = false;
  std::string out;
  json params = json::object();  // subcommand-specific

  ModelSpec spec() const {
    ModelSpec m;
    m.model = model;
    m.nu = nu;
    m.walk = {p_bullet, p_circ};
    m.boundary_mode = boundary_mode;
    return m;
  }
};

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["subcommand"] = c.subcommand;
  j["model"] = c.model == Model::SEP ? "SEP" : "PCRW";
  if (c.rhos.size() == 1)
    j["rho"] = c.rhos[0];
  else
    j["rho"] = c.rhos;
  j["nu"] = c.nu;
  j["p_bullet"] = c.p_bullet;
  j["p_circ"] = c.p_circ;
  if (c.L)
    j["L"] = *c.L;
  else
    j["L"] = "inf";
  j["n"] = c.n;
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  j["tol"] = c.tol;
  j["boundary_mode"] = c.boundary_mode;
  j["out"] = c.out;
  j["params"] = c.params;
  return j;
}

// 1-based line of the first occurrence of "key" in the text, 0 if absent.
inline int line_of_key(const std::string& text, const std::string& key) {
  auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + int(std::count(text.begin(), text.begin() + std::ptrdiff_t(pos), '\n'));
}

inline int line_of_byte(const std::string& text, size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + int(std::count(text.begin(), text.begin() + std::ptrdiff_t(byte), '\n'));
}

namespace detail {

struct Reader {
  const std::string& text;
  const json& j;

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    int line = line_of_key(text, key);
    throw ConfigError(key + ": " + msg, line);
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception&) {
      fail(key, "wrong type");
    }
  }
};

}  // namespace detail

inline void validate(const ExperimentConfig& c, const std::string& text = {}) {
  auto fail = [&](const std::string& key, const std::string& msg) {
    throw ConfigError(key + ": " + msg, line_of_key(text, key));
  };
  if (std::find(subcommands().begin(), subcommands().end(), c.subcommand) == subcommands().end())
    fail("subcommand", "unknown subcommand '" + c.subcommand + "'");
  if (c.rhos.empty()) fail("rho", "at least one density is required");
  try {
    for (double r : c.rhos) EnvParams{c.model, r, c.nu, c.boundary_mode}.validate();
  } catch (const ParameterError& e) {
    fail("rho", e.what());
  }
  try {
    c.spec().walk.validate();
  } catch (const ParameterError& e) {
    fail("p_bullet", e.what());
  }
  if (c.n < 1) fail("n", "must be >= 1");
  if (c.reps < 2) fail("reps", "must be >= 2");
  if (c.L && *c.L < 1) fail("L", "must be >= 1 or \"inf\"");
  if (c.subcommand == "vl" && !c.L) fail("L", "vl needs a finite L");
  if (c.subcommand == "rho-c" && c.tol < 1e-3) fail("tol", "must be >= 1e-3");
  if (c.subcommand == "scan")
    for (size_t i = 1; i < c.rhos.size(); ++i)
      if (c.rhos[i] < c.rhos[i - 1]) fail("rho", "scan densities must be nondecreasing");
  if (!c.params.is_object()) fail("params", "must be an object");
  if (c.subcommand == "coupling-test") {
    static const std::set<std::string> kinds{"drift", "covering", "surgery", "sprinkler", "scale"};
    std::string k = c.params.value("coupling", std::string("drift"));
    if (!kinds.count(k)) fail("coupling", "unknown coupling '" + k + "'");
    if (k != "drift" && c.model != Model::SEP) fail("model", "only drift_coupling supports PCRW");
  }
  if (c.subcommand == "env-check") {
    std::string k = c.params.value("check", std::string("density"));
    if (k != "density" && k != "stationarity") fail("check", "unknown check '" + k + "'");
  }
}

// Parses a JSON config; a provenance sidecar is accepted too (its "config").
inline ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line_of_byte(text, e.byte));
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object", 1);
  const json& j = root.contains("config") && root["config"].is_object() ? root["config"] : root;
  static const std::set<std::string> known{"subcommand", "model", "rho",  "nu",  "p_bullet",      "p_circ",
                                           "L",          "n",     "reps", "seed", "tol", "boundary_mode",
                                           "out",        "params"};
  for (auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "'", line_of_key(text, k));
  detail::Reader r{text, j};
  ExperimentConfig c;
  r.get("subcommand", c.subcommand);
  if (j.contains("model")) {
    std::string m;
    r.get("model", m);
    if (m == "SEP" || m == "sep")
      c.model = Model::SEP;
    else if (m == "PCRW" || m == "pcrw")
      c.model = Model::PCRW;
    else
      r.fail("model", "expected SEP or PCRW");
  }
  if (j.contains("rho")) {
    if (j["rho"].is_array())
      r.get("rho", c.rhos);
    else if (j["rho"].is_number())
      c.rhos = {j["rho"].get<double>()};
    else
      r.fail("rho", "expected a number or a list of numbers");
  }
  r.get("nu", c.nu);
  r.get("p_bullet", c.p_bullet);
  r.get("p_circ", c.p_circ);
  if (j.contains("L")) {
    if (j["L"].is_string()) {
      if (j["L"].get<std::string>() != "inf") r.fail("L", "expected an integer or \"inf\"");
      c.L.reset();
    } else if (j["L"].is_number_integer()) {
      c.L = j["L"].get<int64_t>();
    } else {
      r.fail("L", "expected an integer or \"inf\"");
    }
  }
  r.get("n", c.n);
  r.get("reps", c.reps);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || (j["seed"].is_number_integer() && !j["seed"].is_number_unsigned()))
      r.fail("seed", "expected an unsigned 64-bit integer");
    c.seed = j["seed"].get<uint64_t>();
  }
  r.get("tol", c.tol);
  r.get("boundary_mode", c.boundary_mode);
  r.get("out", c.out);
  if (j.contains("params")) c.params = j["params"];
  return c;
}

// FNV-1a over the canonical (key-sorted, compact) dump, output path excluded.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("out");
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------- records ----------------------

struct Record {
  std::string subcommand;
  std::optional<double> rho;
  double estimate = 0, stderr_ = 0, ci_lo = 0, ci_hi = 0;
  int64_t reps = 0;
  json aux = json::object();
};

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return json(v).dump();  // shortest round-trip form
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) {
    if (ch == '"') o += '"';
    o += ch;
  }
  return o + "\"";
}

inline std::string csv_header() {
  std::string h;
  for (size_t i = 0; i < csv_columns().size(); ++i) h += (i ? "," : "") + csv_columns()[i];
  return h + "\n";
}

inline std::string csv_row(const ExperimentConfig& c, const Record& r) {
  std::vector<std::string> f{std::to_string(kSchemaVersion),
                             r.subcommand,
                             c.model == Model::SEP ? "SEP" : "PCRW",
                             r.rho ? fmt_double(*r.rho) : "",
                             fmt_double(c.nu),
                             fmt_double(c.p_bullet),
                             fmt_double(c.p_circ),
                             c.L ? std::to_string(*c.L) : "inf",
                             std::to_string(c.n),
                             std::to_string(r.reps),
                             std::to_string(c.seed),
                             fmt_double(r.estimate),
                             fmt_double(r.stderr_),
                             fmt_double(r.ci_lo),
                             fmt_double(r.ci_hi),
                             csv_quote(r.aux.dump())};
  std::string s;
  for (size_t i = 0; i < f.size(); ++i) s += (i ? "," : "") + f[i];
  return s + "\n";
}

inline json record_json(const ExperimentConfig& c, const Record& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["subcommand"] = r.subcommand;
  j["model"] = c.model == Model::SEP ? "SEP" : "PCRW";
  j["rho"] = r.rho ? json(*r.rho) : json(nullptr);
  j["nu"] = c.nu;
  j["p_bullet"] = c.p_bullet;
  j["p_circ"] = c.p_circ;
  j["L"] = c.L ? json(*c.L) : json("inf");
  j["n"] = c.n;
  j["reps"] = r.reps;
  j["seed"] = c.seed;
  j["estimate"] = r.estimate;
  j["stderr"] = r.stderr_;
  j["ci_lo"] = r.ci_lo;
  j["ci_hi"] = r.ci_hi;
  j["aux"] = r.aux;
  return j;
}

// ---------------------- runner ----------------------

namespace detail {

inline Record from_estimate(const std::string& sub, std::optional<double> rho, const EstimateWithCI& e) {
  Record r;
  r.subcommand = sub;
  r.rho = rho;
  r.estimate = e.mean;
  r.stderr_ = e.se;
  r.ci_lo = e.lo;
  r.ci_hi = e.hi;
  r.reps = e.reps;
  r.aux["method"] = e.method;
  r.aux["level"] = e.level;
  r.aux["horizon"] = e.horizon;
  return r;
}

inline Record frequency(const std::string& sub, double rho, int64_t k, int64_t n) {
  auto e = wilson_ci(k, n);
  Record r = from_estimate(sub, rho, e);
  r.stderr_ = std::sqrt(e.mean * (1 - e.mean) / double(n));
  return r;
}

inline void gate(const json& params, double value, const std::string& what) {
  if (params.contains("gate_min") && value < params["gate_min"].get<double>())
    throw GateFailure(what + " " + fmt_double(value) + " below gate_min");
  if (params.contains("gate_max") && value > params["gate_max"].get<double>())
    throw GateFailure(what + " " + fmt_double(value) + " above gate_max");
}

inline EstimateWithCI finite_range_speed(const ExperimentConfig& c, double rho, int threads) {
  auto p = c.spec().at(rho, *c.L);
  auto v = parallel_map(c.reps, threads, [&](int64_t i) {
    auto r = run_layers(p, {rho}, c.n, replication_seed(c.seed, i));
    return double(r.ends[0]) / double(c.n);
  });
  auto e = mean_ci(v, 0.95, "iid-replications");
  e.seed = c.seed;
  e.horizon = c.n;
  return e;
}

inline void coupling_test(const ExperimentConfig& c, int threads, std::vector<Record>& out) {
  const json& P = c.params;
  std::string kind = P.value("coupling", std::string("drift"));
  double rho = c.rhos[0], nu = c.nu;
  double eps = P.value("eps", 0.2);
  Record rec;
  json aux;
  aux["coupling"] = kind;
  if (kind == "drift") {
    int64_t H = P.value("H", int64_t(200)), k = P.value("k", int64_t(1));
    double t = P.value("t", 20.0);
    auto ok = parallel_map(c.reps, threads, [&](int64_t i) {
      uint64_t s = replication_seed(c.seed, i);
      RngStream r(derive_key(s, {tag::env_init}));
      if (c.model == Model::PCRW) {
        auto l = sample_stationary_layers(Model::PCRW, {rho, rho + eps}, LatticeWindow{H}, r);
        return int(drift_coupling(l[1], l[0], nu, t, H, k, s).success("domination"));
      }
      auto [hi, lo] = sample_local_domination(rho, std::min(1.0, rho + eps), H, LatticeWindow{2 * H}, r);
      return int(drift_coupling(hi, lo, nu, t, H, k, s).success("domination"));
    });
    int64_t succ = std::accumulate(ok.begin(), ok.end(), int64_t(0));
    rec = frequency("coupling-test", rho, succ, c.reps);
    aux["event"] = "domination";
    if (c.model == Model::SEP) aux["failure_bound"] = 20 * std::exp(-double(k) * nu * t / 4);
  } else if (kind == "covering" || kind == "surgery") {
    double dh = P.value("high_density", 1 / std::sqrt(2.0)), dl = P.value("low_density", 0.2);
    bool cover = kind == "covering";
    int64_t t = P.value("t", int64_t(cover ? 1296 : 2592));
    int64_t H = P.value("H", int64_t(std::ceil(8 * nu * double(t))) + 100);
    int64_t H1 = P.value("H1", int64_t(std::ceil(4 * nu * double(t))) + 200);
    int64_t H2 = P.value("H2", 2 * H1);
    int64_t half = (cover ? H : H2) + 64;
    auto ok = parallel_map(c.reps, threads, [&](int64_t i) {
      uint64_t s = replication_seed(c.seed, i);
      RngStream r(derive_key(s, {tag::env_init}));
      auto hi = banded_configuration(Model::SEP, LatticeWindow{half}, dh, r.uniform());
      auto lo = banded_configuration(Model::SEP, LatticeWindow{half}, dl, r.uniform());
      if (cover) {
        CoveringOptions o;
        o.mesh = P.value("mesh", int64_t(0));
        return std::array<int, 2>{int(covering_coupling(hi, lo, rho, eps, nu, t, H, s, o).success("domination")), 1};
      }
      for (int64_t x = -H1; x <= H1; ++x) lo.set(x, lo.get(x) && hi.get(x));
      SurgeryOptions o;
      o.mesh = P.value("mesh", int64_t(6));
      auto rep = surgery_coupling(hi, lo, rho, eps, nu, H1, H2, t, s, o);
      return std::array<int, 2>{int(rep.success("outer")), int(rep.success("inner"))};
    });
    int64_t succ = 0, inner = 0;
    for (auto& a : ok) succ += a[0], inner += a[1];
    rec = frequency("coupling-test", rho, succ, c.reps);
    aux["event"] = cover ? "domination" : "outer";
    aux["t"] = t;
    if (cover) {
      aux["H"] = H;
    } else {
      aux["H1"] = H1;
      aux["H2"] = H2;
      aux["inner_frequency"] = double(inner) / double(c.reps);
    }
  } else if (kind == "sprinkler") {
    int64_t ell = P.value("ell", int64_t(1)), H = P.value("H", int64_t(50)), k = P.value("k", int64_t(1));
    int64_t half = std::max(H, 3 * ell) + 10;
    auto ok = parallel_map(c.reps, threads, [&](int64_t i) {
      uint64_t s = replication_seed(c.seed, i);
      RngStream r(derive_key(s, {tag::env_init}));
      EnvState lo(Model::SEP, LatticeWindow{half});
      for (int64_t x = -half; x <= half; ++x) lo.set(x, x != 0 && r.uniform() < rho);
      EnvState hi = lo;
      hi.set(0, 1);
      auto rep = sprinkler_coupling(hi, lo, rho, nu, ell, H, k, s);
      return int(rep.success("target_0") || rep.success("target_1"));
    });
    int64_t succ = std::accumulate(ok.begin(), ok.end(), int64_t(0));
    rec = frequency("coupling-test", rho, succ, c.reps);
    aux["event"] = "target";
    aux["delta"] = sprinkler_delta(rho, nu, ell);
  } else {
    ScaleCouplingParams sp;
    sp.rho = rho;
    sp.eps = P.value("eps", 0.5);
    sp.nu = nu;
    sp.walk = c.spec().walk;
    sp.L = c.L.value_or(2000);
    sp.f = P.value("f", int64_t(64));
    auto rows = parallel_map(c.reps, threads, [&](int64_t i) {
      auto r = sprinkled_scale_coupling(sp, replication_seed(c.seed, i));
      return std::array<int64_t, 3>{r.min_gap <= -sp.f, r.G, r.shift_violations};
    });
    int64_t bad = 0, g = 0, sv = 0;
    for (auto& a : rows) bad += a[0], g += a[1], sv += a[2];
    rec = frequency("coupling-test", rho, bad, c.reps);
    aux["event"] = "min_gap <= -f";
    aux["G_frequency"] = double(g) / double(c.reps);
    aux["shift_violations"] = sv;
    aux["regime"] = false;
  }
  rec.aux.update(aux);
  out.push_back(rec);
  gate(P, rec.estimate, kind + " frequency");
}

inline void env_check(const ExperimentConfig& c, std::vector<Record>& out) {
  const json& P = c.params;
  std::string kind = P.value("check", std::string("density"));
  for (double rho : c.rhos) {
    EnvParams ep{c.model, rho, c.nu, c.boundary_mode};
    Record rec;
    if (kind == "density") {
      auto r = density_conservation_test(ep, P.value("t", 1000.0), P.value("mesh", int64_t(50)), P.value("eps", 0.1),
                                         c.reps, RngStream(c.seed), P.value("M", int64_t(10000)),
                                         P.value("threshold", 0.05));
      rec = frequency("env-check", rho, r.exceedances, r.reps);
      rec.aux["check"] = "density";
      rec.aux["pass"] = r.pass;
      rec.aux["regime"] = r.regime;
      rec.aux["threshold"] = r.threshold;
      out.push_back(rec);
      if (P.value("gate", false) && !r.pass) throw GateFailure("density conservation rate above threshold");
    } else {
      int64_t M = P.value("M", int64_t(5000));
      double t = P.value("t", 10.0);
      RngStream r(c.seed);
      std::map<int64_t, int64_t> h;
      for (int64_t i = 0; i < c.reps; ++i) {
        auto s = sample_stationary(ep, LatticeWindow{M}, r);
        if (c.model == Model::SEP)
          advance_sep(s, c.nu, t, r);
        else
          advance_pcrw(s, int64_t(t), r);
        for (auto v : s.slots()) h[v]++;
      }
      auto pmf = [&](int64_t k) {
        if (c.model == Model::SEP) return k == 0 ? 1 - rho : k == 1 ? rho : 0.0;
        return boost::math::pdf(boost::math::poisson_distribution<double>(rho), double(k));
      };
      auto res = chi_square_gof(h, pmf, 0, c.model == Model::SEP ? 1 : 40);
      rec.subcommand = "env-check";
      rec.rho = rho;
      rec.estimate = res.p_value;
      rec.stderr_ = 0;
      rec.ci_lo = rec.ci_hi = res.p_value;
      rec.reps = c.reps;
      rec.aux["check"] = "stationarity";
      rec.aux["statistic"] = res.statistic;
      rec.aux["df"] = res.df;
      out.push_back(rec);
      gate(P, res.p_value, "stationarity p-value");
    }
  }
}

}  // namespace detail

// Appends one record per estimate to `out` as it is produced, so a runtime
// abort leaves the finished records in place.
inline void run_experiment(const ExperimentConfig& c, int threads, std::vector<Record>& out) {
  validate(c);
  auto m = c.spec();
  const auto& s = c.subcommand;
  if (s == "speed") {
    for (double rho : c.rhos) {
      auto e = c.L ? detail::finite_range_speed(c, rho, threads) : estimate_speed(m, rho, c.n, c.reps, c.seed, threads);
      out.push_back(detail::from_estimate(s, rho, e));
    }
  } else if (s == "theta" || s == "backtrack") {
    for (double rho : c.rhos) {
      auto e = s == "theta" ? estimate_theta_n(m, rho, c.n, c.reps, c.seed, threads)
                            : estimate_backtracking(m, rho, c.n, c.reps, c.seed, threads);
      auto r = detail::from_estimate(s, rho, e.est);
      r.stderr_ = std::sqrt(e.est.mean * (1 - e.est.mean) / double(c.reps));
      r.aux["unresolved"] = e.unresolved;
      r.aux["cap"] = e.cap;
      out.push_back(r);
    }
  } else if (s == "vl") {
    for (double rho : c.rhos) out.push_back(detail::from_estimate(s, rho, estimate_vL(m.at(rho, *c.L), c.reps, c.seed, threads)));
  } else if (s == "scan") {
    auto sc = monotone_speed_scan(m, c.rhos, c.n, c.reps, c.seed, threads);
    for (size_t j = 0; j < sc.rhos.size(); ++j) {
      auto r = detail::from_estimate(s, sc.rhos[j], sc.estimates[j]);
      r.aux["order_violations"] = sc.order_violations;
      out.push_back(r);
    }
    for (size_t j = 0; j < sc.paired_differences.size(); ++j) {
      auto r = detail::from_estimate(s, std::nullopt, sc.paired_differences[j]);
      r.aux["paired_difference"] = {sc.rhos[j], sc.rhos[j + 1]};
      r.aux["order_violations"] = sc.order_violations;
      out.push_back(r);
    }
  } else if (s == "rho-c") {
    RhoCOptions o;
    const json& P = c.params;
    o.lo = P.value("lo", o.lo);
    o.hi = P.value("hi", o.hi);
    o.first_batch = P.value("first_batch", o.first_batch);
    o.max_reps_per_probe = P.value("max_reps_per_probe", o.max_reps_per_probe);
    o.max_probes = P.value("max_probes", o.max_probes);
    o.z = P.value("z", o.z);
    auto b = estimate_rho_c(m, c.n, c.tol, c.seed, o, threads);
    Record r;
    r.subcommand = s;
    r.estimate = (b.lo + b.hi) / 2;
    r.stderr_ = b.width() / 2;
    r.ci_lo = b.lo;
    r.ci_hi = b.hi;
    int64_t reps = 0;
    json probes = json::array();
    for (auto& p : b.probes) {
      reps += p.est.reps;
      probes.push_back({{"rho", p.rho}, {"sign", sign_name(p.sign)}, {"mean", p.est.mean}, {"se", p.est.se},
                        {"reps", p.est.reps}});
    }
    r.reps = reps;
    r.aux["verdict"] = verdict_name(b.verdict);
    r.aux["reached_tol"] = b.reached_tol;
    r.aux["budget_exhausted"] = b.budget_exhausted;
    r.aux["probes"] = probes;
    out.push_back(r);
  } else if (s == "coupling-test") {
    detail::coupling_test(c, threads, out);
  } else if (s == "env-check") {
    detail::env_check(c, out);
  }
}

}  // namespace driftlab
