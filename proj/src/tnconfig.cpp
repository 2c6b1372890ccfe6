#include "wildgrad/tnconfig.hpp"

#include <cmath>
#include <string>

namespace wildgrad {

CoeffMatrix cyclic_coeffs(const std::vector<double>& t) {
  int N = (int)t.size();
  if (N < 2) throw precondition_error("cyclic_coeffs: need N >= 2");
  for (int k = 0; k < N; ++k)
    if (!(t[(size_t)k] > 0 && t[(size_t)k] < 1))
      throw precondition_error("cyclic_coeffs: t[" + std::to_string(k + 1) +
                               "] = " + str(t[(size_t)k]) + " outside (0,1)");
  double tau = 1;
  for (double tk : t) tau *= 1 - tk;
  CoeffMatrix cm;
  cm.N = N;
  cm.nu.assign((size_t)N * N, 0.0);
  // Row i: walk j = i-1, i-2, ..., i-N (cyclically); each step picks up a
  // factor (1 - t) of the indices already passed.
  for (int i = 1; i <= N; ++i) {
    double chain = 1;
    for (int s = 1; s <= N; ++s) {
      int j = ((i - 1 - s) % N + N) % N + 1;
      cm.at(i, j) = t[(size_t)j - 1] * chain / (1 - tau);
      chain *= 1 - t[(size_t)j - 1];
    }
  }
  return cm;
}

TNConfig build_tn(const MatrixPair& rho, std::vector<WaveVector> gammas,
                  std::vector<double> kappas) {
  int N = (int)gammas.size();
  if (N < 2) throw precondition_error("build_tn: need N >= 2");
  if ((int)kappas.size() != N) throw precondition_error("build_tn: kappa count != gamma count");
  for (int i = 0; i < N; ++i) {
    validate_wave(gammas[(size_t)i], "build_tn: gamma[" + std::to_string(i + 1) + "]");
    if (gammas[(size_t)i].p.n != rho.m() || gammas[(size_t)i].a.n != rho.n())
      throw scenario_error("build_tn: gamma[" + std::to_string(i + 1) + "] shape mismatch");
    if (!(kappas[(size_t)i] > 1))
      throw scenario_error("build_tn: kappa[" + std::to_string(i + 1) + "] = " +
                           str(kappas[(size_t)i]) + " must exceed 1");
  }

  // Recompute the last gamma from the zero-sum constraint and require the
  // supplied one to match.
  MatrixPair target = MatrixPair::zero(rho.m(), rho.n());
  for (int i = 0; i + 1 < N; ++i) target = target - gammas[(size_t)i].pair();
  const WaveVector& supplied = gammas[(size_t)N - 1];
  double scale = 1 + norm(target) + norm(supplied.pair());
  if (dist(supplied.pair(), target) > 1e-9 * scale)
    throw scenario_error("build_tn: gamma[" + std::to_string(N) +
                         "] disagrees with minus the sum of the others by " +
                         str(dist(supplied.pair(), target)));
  WaveVector last = supplied;
  double a2 = dot(last.a, last.a);
  last.p = (1 / a2) * mat_vec(target.first, last.a);
  last.B = target.second;
  if (dist(last.pair(), target) > 1e-9 * scale)
    throw scenario_error("build_tn: zero-sum residual is not rank-one along a");
  validate_wave(last, "build_tn: recomputed gamma[" + std::to_string(N) + "]");
  gammas[(size_t)N - 1] = last;

  TNConfig cfg;
  cfg.rho = rho;
  cfg.gammas = std::move(gammas);
  cfg.kappas = std::move(kappas);
  cfg.pis.resize((size_t)N);
  cfg.xis.resize((size_t)N);
  cfg.chis.resize((size_t)N);
  MatrixPair walk = rho;
  for (int i = 0; i < N; ++i) {
    cfg.pis[(size_t)i] = walk;
    MatrixPair g = cfg.gammas[(size_t)i].pair();
    cfg.xis[(size_t)i] = walk + cfg.kappas[(size_t)i] * g;
    cfg.chis[(size_t)i] = 1 / cfg.kappas[(size_t)i];
    walk = walk + g;
  }
  return cfg;
}

double tn_distance(const TNConfig& cfg, const MatrixPair& x) {
  double best = -1;
  for (int j = 1; j <= cfg.N(); ++j) {
    double d = segment_distance(x, Segment{cfg.xi(j), cfg.pi(j)});
    if (best < 0 || d < best) best = d;
  }
  return best;
}

std::vector<double> corner_weights(const TNConfig& cfg, int i, double lambda) {
  if (i < 1 || i > cfg.N()) throw precondition_error("corner_weights: index out of range");
  if (!(lambda >= 0 && lambda <= 1))
    throw precondition_error("corner_weights: lambda outside [0,1]");
  CoeffMatrix cm = cyclic_coeffs(cfg.chis);
  std::vector<double> w((size_t)cfg.N());
  for (int j = 1; j <= cfg.N(); ++j)
    w[(size_t)j - 1] = (1 - lambda) * cm.at(i, j) + (j == i ? lambda : 0);
  return w;
}

}  // namespace wildgrad
