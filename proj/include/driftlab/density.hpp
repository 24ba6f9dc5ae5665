#pragma once

#include <cmath>
#include <cstdint>

#include "driftlab/env.hpp"
#include "driftlab/pcrw.hpp"
#include "driftlab/sep.hpp"

namespace driftlab {

struct DensityConservationResult {
  double rate = 0;  // fraction of replications with an exceedance
  int64_t exceedances = 0;
  int64_t reps = 0;
  double threshold = 0;
  bool pass = false;
  bool regime = false;  // M > 4 nu t > mesh^2 / eps^2
};

// Starts from a Sturmian configuration of density rho (every mesh-interval
// within one particle of rho * mesh), evolves to time t on [-M, M] and
// checks every length-mesh interval of [-M + 2 nu t, M - 2 nu t] for a
// count outside (rho -+ 3 eps) mesh.
inline DensityConservationResult density_conservation_test(const EnvParams& p, double t, int64_t mesh,
                                                           double eps, int64_t reps, RngStream rng,
                                                           int64_t M, double threshold = 0.05) {
  p.validate();
  if (mesh < 1 || reps < 1 || M < 1 || !(t >= 0) || !(eps > 0))
    throw ParameterError("density_conservation_test: need mesh, reps, M >= 1, t >= 0, eps > 0");
  if (eps * double(mesh) < 1)
    throw ParameterError("density_conservation_test: eps * mesh < 1 admits no banded start");
  DensityConservationResult r;
  r.reps = reps;
  r.threshold = threshold;
  r.regime = double(M) > 4 * p.nu * t && 4 * p.nu * t > double(mesh * mesh) / (eps * eps);
  int64_t shrink = int64_t(std::ceil(2 * p.nu * t));
  int64_t a = -M + shrink, b = M - shrink;
  double hi = (p.rho + 3 * eps) * double(mesh), lo = (p.rho - 3 * eps) * double(mesh);
  LatticeWindow w{M};
  for (int64_t i = 0; i < reps; ++i) {
    RngStream ri = rng.split(tag::replication, uint64_t(i));
    EnvState s = banded_configuration(p.model, w, p.rho, ri.uniform());
    if (p.model == Model::SEP)
      advance_sep(s, p.nu, t, ri);
    else
      advance_pcrw(s, int64_t(t), ri);
    if (b - a + 1 < mesh) continue;
    int64_t c = interval_count(s, a, a + mesh - 1).count;
    bool bad = false;
    for (int64_t x = a;; ++x) {
      if (double(c) > hi || double(c) < lo) {
        bad = true;
        break;
      }
      if (x + mesh > b) break;
      c += int64_t(s.get(x + mesh)) - int64_t(s.get(x));
    }
    r.exceedances += bad;
  }
  r.rate = double(r.exceedances) / double(reps);
  r.pass = r.rate <= threshold;
  return r;
}

}  // namespace driftlab
