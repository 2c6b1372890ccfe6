#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wildgrad/core.hpp"

namespace wildgrad {

// Problem data for the construction: N continuous families
// rho -> (kappa_i(rho), gamma_i(rho)) over the closed ball |rho| <= r0 in
// matrix-pair space, with the gammas summing to zero pointwise, plus the
// flux map sigma whose graph the staircase corners must lie on. Everything
// downstream (membership sets, gap estimates, stage bounds) is derived from
// these maps.

struct Decomposition {
  int i = 0;             // branch index, 1-based
  double lambda_prime = 0;
  double q = 0;
  MatrixPair rho;        // parameter of the moving endpoint
  MatrixPair rho_prime;  // parameter of the anchor endpoint
  double residual = 0;   // reconstruction + cone defect at the witness
};

struct DecomposeResult {
  bool found = false;
  Decomposition witness;
  double best_residual = 0;
  explicit operator bool() const { return found; }
};

struct Scenario {
  std::string name;
  int m = 0, n = 0, N = 0;
  double r0 = 0;
  double delta1 = 0, delta2 = 0;
  /// Graph fidelity tolerance for |sigma(corner first slot) - second slot|.
  double graph_tol = 1e-8;
  std::function<std::vector<double>(const MatrixPair&)> kappa_map;
  std::function<std::vector<WaveVector>(const MatrixPair&)> gamma_map;
  std::function<Mat(const Mat&)> sigma;
  /// Optional closed-form membership solver; the generic multi-start search
  /// is used when absent.
  std::function<DecomposeResult(const Scenario&, double r, double lambda,
                                const MatrixPair&)>
      decomposer;
};

/// Staircase anchor pi_i(rho) = rho + gamma_1 + ... + gamma_{i-1}, i 1-based.
MatrixPair anchor(const Scenario& s, int i, const MatrixPair& rho);

/// Staircase corner xi_i(rho) = pi_i(rho) + kappa_i(rho) gamma_i(rho).
MatrixPair corner(const Scenario& s, int i, const MatrixPair& rho);

/// Convex combination zeta_i(lambda, rho) = lambda xi_i + (1-lambda) pi_i.
/// Requires |rho| <= r0.
MatrixPair zeta(const Scenario& s, int i, double lambda, const MatrixPair& rho);

/// Barycentric weights writing the anchor pi_i(rho) as a combination of the
/// points zeta_j(lambda, rho): row i of the cyclic coefficient system with
/// ratios t_k = 1/(kappa_k(rho) lambda). Requires delta2 < lambda <= 1 and
/// |rho| < r0; the weights sum to 1 and every entry is at least
/// (lambda - delta2)^{N-1} delta1.
std::vector<double> pi_decomposition(const Scenario& s, int i, double lambda,
                                     const MatrixPair& rho);

enum class Membership { member, not_member, unresolved };

struct ClassifyResult {
  Membership status = Membership::unresolved;
  int i = 0;        // branch, valid when member
  MatrixPair rho;   // witness with zeta_i(lambda, rho) = Y, valid when member
  double residual = 0;
  explicit operator bool() const { return status == Membership::member; }
};

/// Branch membership of Y in the level-lambda image sets over the open ball
/// of radius r: returns the branch and a parameter witness when the solve
/// converges, a certified non-membership when Y is provably far from every
/// sampled image, and unresolved otherwise. Requires 0 < r <= r0 and
/// lambda = 0 or delta2 <= lambda <= 1.
ClassifyResult classify_S(const Scenario& s, double r, double lambda,
                          const MatrixPair& Y);

/// Defect of the pair (U, V) from the cone of pairs (p (x) a, B) with
/// B a = 0: second singular value of U plus the kernel residual |V a| along
/// the top right singular direction a of U. Zero exactly on cone members.
double wave_cone_residual(const Mat& U, const Mat& V);

/// Membership of Y in the union over lambda' in [delta2, lambda] of the
/// segment sets between the level-lambda' images and the anchors, over the
/// open ball of radius r. A witness (i, lambda', q, rho, rho') satisfies
/// Y = q zeta_i(lambda', rho) + (1-q) pi_i(rho') with the endpoint
/// difference in the wave cone. Uses the scenario's closed-form decomposer
/// when present, otherwise a deterministic multi-start damped least-squares
/// search; first witness in (branch ascending, lambda' ascending) order
/// wins. Requires 0 < r <= r0 and delta2 <= lambda < 1.
DecomposeResult decompose_Sigma(const Scenario& s, double r, double lambda,
                                const MatrixPair& Y);

struct GapEstimates {
  double d_prime = 0;      // reported value, half the raw estimate
  double d0 = 0;           // reported value, half the raw estimate
  double d_prime_raw = 0;
  double d0_raw = 0;
};

/// Sampled safety gaps: d_prime probes how far the level-mu membership sets
/// at radius r sit inside their radius-s counterparts (directional exit
/// distances, minimum over branch sets and the segment union), and d0 is
/// the minimum pairwise distance between the projected corner images over
/// the closed r0-ball. Both are halved before reporting. Requires
/// 0 < r < s <= r0 and delta2 <= mu < 1; nonpositive estimates raise a
/// scenario error.
GapEstimates set_gaps(const Scenario& s, double r, double s_outer, double mu,
                      int samples, uint64_t seed);

struct ValidationCheck {
  std::string name;
  bool pass = false;
  double worst = 0;      // worst sampled value for the check's margin
  std::string detail;
};

struct ValidationReport {
  bool ok = false;
  std::vector<ValidationCheck> checks;
  std::string summary() const;
};

/// Sampled verification of the scenario contract: gamma zero-sum, kappa
/// range, wave-cone membership of each gamma, graph fidelity of the
/// corners, pairwise separation of projected corner and anchor images, and
/// openness of the level sets (full-rank parameter Jacobians plus pairwise
/// set separation across a level grid). Requires samples >= 1000.
ValidationReport validate_scenario(const Scenario& s, int samples,
                                   uint64_t seed);

/// Scalar two-branch data set used throughout the tests and as the default
/// run input: piecewise-affine sigma with slopes +1, -1, +1 and breakpoints
/// at -1 and 1, unit horizontal waves, kappa_1 = 2 + rho^2 - rho^1,
/// kappa_2 = 3 - rho^2 + rho^1, r0 = 0.1, delta1 = 0.2, delta2 = 0.6, and a
/// closed-form decomposer.
Scenario two_branch_scenario();

struct ScenarioMaps {
  std::string name;
  int m = 0, n = 0, N = 0;
  double r0 = 0;
  double delta1 = 0, delta2 = 0;
  std::function<std::vector<double>(const MatrixPair&)> kappa_map;
  std::function<std::vector<WaveVector>(const MatrixPair&)> gamma_map;
};

/// Build a scenario from the maps alone: sigma is defined on each projected
/// corner patch by inverting the first slot numerically and reading the
/// second, and elsewhere by the value at the nearest patch point. Rejects
/// maps whose patches are multivalued (close first slots with far second
/// slots), degenerate, or pairwise overlapping.
Scenario graph_first_scenario(const ScenarioMaps& maps, int samples = 2048,
                              uint64_t seed = 1);

struct CompactnessFit {
  double r1 = 0;
  double lambda1 = 0;
};

/// Smallest radius (step r0/50, ascending) and then smallest level (step
/// 0.01 from delta2, ascending) whose membership set contains every given
/// point. Points must decompose at the near-maximal parameters
/// (r0 (1 - 1e-3), 1 - 1e-3) or a precondition error names the offender.
CompactnessFit compactness_fit(const Scenario& s,
                               const std::vector<MatrixPair>& points);

}  // namespace wildgrad
