#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wildgrad/stage.hpp"

namespace wildgrad {

// The full construction: a geometric schedule of levels and radii, one
// covering pass for the first stage, then per-plateau refinement passes
// that graft a step construction into every pinned region of the previous
// stage. Identical plateaus share one grafted body, so the work per stage
// is the number of distinct (value, cell) shapes, not the number of sites.

// ============================================================
// Schedules
// ============================================================

/// Levels halve their distance to one, radii halve their distance to r0,
/// accuracies decay by thirds so their total stays below delta/2.
struct Schedule {
  double delta = 0;
  std::vector<double> lambda;  // K+1 levels, lambda[0] = lambda_1
  std::vector<double> r;       // K+1 radii
  std::vector<double> eps;     // K accuracies, eps[0] = delta/3
  int K = 0;
  double r0 = 0;

  /// Sum of the first `upto` accuracies, the drift budget through that stage.
  double eps_sum(int upto) const;
};

/// Requires 0 < lambda1 < 1, 0 < r1 < r0, K >= 1, delta in (0,1).
Schedule make_schedule(double delta, double lambda1, double r1, double r0,
                       int K);

// ============================================================
// Verification probes
// ============================================================

/// One row of the pinned-mass survival table: inside reference cell j of
/// stage q, the exact mass still pinned at level-lambda_{p+1} branch-k
/// values after stage p, its Monte Carlo audit, and the closed-form floor.
struct PersistenceEntry {
  int q = 0;
  int j = 0;
  int p = 0;
  int k = 0;
  double volume = 0;       // |Q^q_j|
  double measured = 0;     // exact, from region bookkeeping
  double mc_estimate = 0;  // sampling audit, 0 half-width when skipped
  double mc_half = 0;
  double required = 0;
  bool pass = false;
};

struct PersistenceResult {
  bool pass = false;
  double measured = 0;
  double mc_estimate = 0;
  double mc_half = 0;
  double required = 0;
  double volume = 0;
};

struct WildnessProbeRow {
  Box box;
  double gap = 0;  // largest pairwise gradient distance among the samples
  bool pass = false;
  bool scale_limited = false;  // probe radius below the finest built scale
};

struct WildnessReport {
  std::vector<WildnessProbeRow> rows;
  double d0 = 0;
  double radius_hi = 0;
  double radius_lo = 0;
  double scale_floor = 0;
  int passed = 0;
  int scale_limited = 0;
  double fraction = 0;  // passed / probes, 0 for an empty report
};

/// Sample `probes` random boxes with radii log-uniform in
/// [radius_lo, radius_hi] and report, for each, the largest pairwise
/// distance among 256 gradient samples against the oscillation gap d0.
/// Probes with radius below scale_floor are marked scale limited: the
/// finite construction cannot oscillate below its deepest cell. Zero radii
/// default to the largest patch radius; zero probes yield an empty report.
WildnessReport wildness_probe(const FieldTree& field, const Domain& Omega,
                              int probes, uint64_t seed, double d0,
                              double radius_hi = 0, double radius_lo = 0,
                              double scale_floor = 0);

/// Largest quotient |integral of <V, Dphi>| / |Dphi|_L1 over `tests` random
/// compactly supported C^1 bumps phi, each integrated by the midpoint rule
/// on the dyadic subdivision of its support at the given depth. V is
/// divergence-free by construction, so the quotient is pure quadrature
/// error and must shrink as the depth grows. Requires tests >= 1.
double weak_div_residual(const FieldTree& field, const Domain& Omega,
                         int tests, int quad_depth, uint64_t seed);

struct GraphL1 {
  double value = 0;      // estimate of the integral of |sigma(Du) - V|
  double half_width = 0;
  double c_hat = 0;  // largest sampled |sigma(Du)-V| / (1 - level)
};

/// Stratified-grid estimate of the graph defect integral over Omega: one
/// uniform sample per grid cell. Samples whose pair sits essentially on a
/// level set (blend weight above 0.9) also feed the empirical constant
/// c_hat. Requires grid >= 2.
GraphL1 graph_l1(const Scenario& s, const FieldTree& field,
                 const Domain& Omega, int grid,
                 uint64_t seed = 0x57a6e004ULL);

// ============================================================
// The construction driver
// ============================================================

struct RunReport {
  Schedule schedule;
  std::vector<StageReport> stages;
  std::vector<BoundRow> rows;  // run-level bounds, all must pass
  std::vector<PersistenceEntry> persistence;
  std::vector<double> graph_l1;       // defect estimate after each stage
  std::vector<double> graph_l1_half;
  std::vector<double> increment_l1;   // exact bound on each Du increment mass
  double linf_drift = 0;    // proven bound on sup |u_K - base u|
  double linf_sampled = 0;  // sampled value of the same quantity
  double c0 = 0;            // recorded increment constant, from stage one
  double c_hat = 0;         // recorded graph-defect constant
  WildnessReport wildness;
  int weak_div_depth = 0;
  double weak_div_coarse = 0;  // residual at weak_div_depth
  double weak_div_fine = 0;    // residual two dyadic depths deeper
  bool all_pass = false;
};

std::string report_json(const RunReport& rep);

/// Survival table lookup: stage-q reference cell j, later stage p, branch
/// k. Requires p > q >= 1 and an entry recorded for (q, j, p, k).
PersistenceResult persistence_check(const RunReport& rep, int q, int j,
                                    int p, int k);

struct RunResult {
  FieldTree field;
  RunReport report;
};

/// Run K refinement stages over Omega starting from the base field. The
/// base V must be divergence-free and the sampled base pairs must fit a
/// starting level and radius (lambda_1 from the fit, r_1 at least r0/5).
/// Stage one covers Omega directly; later stages graft one shared step
/// construction per distinct pinned plateau shape. After each stage the
/// report gains its increment, drift, defect, membership, and survival
/// rows; probe and quadrature rows follow the last stage. Any stage
/// failure is rethrown with the stage index. K = 0 returns the base field
/// and an empty passing report.
RunResult run_construction(const Scenario& s, const FieldBase& base,
                           const Domain& Omega, double delta, int K,
                           uint64_t seed);

}  // namespace wildgrad
