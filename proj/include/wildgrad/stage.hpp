#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wildgrad/core.hpp"
#include "wildgrad/scenario.hpp"
#include "wildgrad/staircase.hpp"

namespace wildgrad {

// One refinement pass: classify where the current field sits on the branch
// sets, cover the classified region by small cubes, and replace the field
// on each cube by a perturbation that pins most of the cube to corner
// values one level up. Every quantitative claim of the pass is re-derived
// from the constructed objects and recorded as a required/achieved row.

// ============================================================
// Piecewise-perturbed fields
// ============================================================

struct FieldValue {
  Vec u;
  Mat du;
  Mat v;
};

/// Smooth background field (u, Du, V) given by callables.
struct FieldBase {
  int m = 0, n = 0;
  std::function<Vec(const Vec&)> u;
  std::function<Mat(const Vec&)> du;
  std::function<Mat(const Vec&)> v;
};

/// Base with u(x) = u0 + du0 x and constant (du0, v0).
FieldBase affine_base(const Vec& u0, const Mat& du0, const Mat& v0);

/// One cube's perturbation: the step construction, its bookkeeping tree,
/// and the certificates the cube was built with.
struct FieldPatch {
  Box cube;
  int label = 0;            // branch the cube was classified to, 0 for blends
  Decomposition witness;    // decomposition of the cube's center value
  MatrixPair start;         // reconstruction the step oscillates around
  double sup_phi = 0;
  std::vector<double> measured;  // exact pinned measure per corner
  std::vector<MatrixPair> pinned_zeta;
  std::vector<MatrixPair> pinned_pi;
  PerturbNode node;         // perturbation in the cube's own frame
  RegionTree tree;
};

struct FieldTree {
  FieldBase base;
  std::vector<FieldPatch> patches;
};

/// Base plus every patch containing x. Patch supports are open and
/// pairwise disjoint, so the boundary and the complement return the base.
FieldValue eval_field(const FieldTree& f, const Vec& x);

/// (Du, V) at x, the pair all membership and classification work uses.
MatrixPair field_pair(const FieldTree& f, const Vec& x);

/// Worker count for per-cube loops: hardware threads capped by the
/// WILDGRAD_THREADS environment variable. 1 selects the serial path.
int run_workers();

// ============================================================
// Stage parameters
// ============================================================

/// Derived quantities of one pass from (lambda, mu, r, s, eps): the safe
/// transverse gap d', the oscillation accuracy eps', and the cube scale
/// ell' from a sampled Lipschitz bound of the field over G.
struct StageParams {
  double lambda = 0, mu = 0;
  double r = 0, s = 0;
  double eps = 0;
  double d_prime = 0;
  double eps_prime = 0;
  double lipschitz = 0;   // doubled max sampled difference quotient
  double ell_prime = 0;
  double diam = 0;        // diameter of G
};

/// eps' = 0.9 min(d'/4, eps/2, 1 - 1/sqrt(2), cap) where cap keeps
/// (1-eps')^3 (B + (1-B)(mu-delta2)^{N-1} delta1) >= B for B = lambda/mu,
/// and ell' = min(diam G, min(d'/4, eps') / Lipschitz). Requires
/// 0 < r < s <= r0, delta2 <= lambda < mu < 1 and eps in (0, 1).
StageParams stage_params(const Scenario& s, const FieldTree& field,
                         const Domain& G, double lambda, double mu, double r,
                         double s_rad, double eps,
                         uint64_t seed = 0x57a6e001ULL);

// ============================================================
// Domain classification
// ============================================================

/// Cells of G with the branch their field values were pinned to, or 0 when
/// the cell straddles branches or sits on a blend. labeled_volume[k] is the
/// exact volume labeled k (index 0: unresolved); miss_estimate[k] bounds
/// the branch-k volume missed by the labeling, from the final sampling
/// pass, with its confidence half-width alongside.
struct DomainLabels {
  std::vector<Box> cells;
  std::vector<int> label;
  std::vector<double> labeled_volume;
  std::vector<double> miss_estimate;
  std::vector<double> miss_half;
  double deficit = 0;   // worst miss fraction achieved
  int rounds = 0;
};

/// Label cells of G by membership of the field values in the branch sets
/// at radius r and level lambda. A cell is labeled only when its center
/// classifies at the shrunken radius 0.95 r, every corner and seeded
/// interior point classifies to the same branch at radius r, and the
/// sampled value spread stays below the transverse gap between the two
/// radii. Unresolved cells are split dyadically until the sampled miss
/// fraction drops to deficit_target or the round budget runs out; the
/// achieved deficit is reported either way.
DomainLabels classify_domain(const Scenario& s, const FieldTree& field,
                             const Domain& G, double r, double lambda,
                             int grid, double deficit_target = 0.01,
                             uint64_t seed = 0x57a6e002ULL);

// ============================================================
// Stage reports
// ============================================================

struct BoundRow {
  std::string name;
  double required = 0;
  double achieved = 0;
  std::string sense;       // "<", "<=", ">="
  std::string method;      // "exact", "sampled", "mc"
  double half_width = 0;   // confidence half-width when method is "mc"
  bool pass = false;
};

struct StageReport {
  StageParams params;
  double g_volume = 0;
  double f0_volume = 0;     // unresolved volume inside G
  double covered = 0;       // total cover volume, exact
  double pinned_total = 0;  // total corner-pinned volume, exact
  std::vector<double> corner_mass;   // pinned volume per corner, exact
  double graph_l1 = 0;      // exact upper bound on the Du increment mass
  double c0_diam = 0;       // sampled diameter of the level-1 blend set
  double c0_ratio = 0;      // achieved increment over its bracket
  double c0 = 0;            // max of the two, the recorded constant
  int cube_count = 0;
  std::vector<Box> cubes;
  std::vector<int> cube_label;
  std::vector<BoundRow> rows;
  bool all_pass = false;
};

std::string report_json(const StageReport& rep);

BoundRow make_row(const std::string& name, double required, double achieved,
                  const std::string& sense, const std::string& method,
                  double half_width = 0);

struct StageResult {
  FieldTree field;
  StageReport report;
};

/// One full pass over G: verify membership of the incoming field in the
/// radius-r level-lambda blend set, classify and cover G by cubes of radius
/// below min(ell', eps), run one corner step per cube with accuracy eps',
/// and append the resulting patches. Every recorded bound is checked; a
/// failing bound raises a stage error naming the row and the cube. The
/// returned field agrees with the input on the boundary and outside G and
/// satisfies the membership precondition of the next pass at (mu, s).
StageResult run_stage(const Scenario& s, FieldTree field, const Domain& G,
                      double lambda, double mu, double r, double s_rad,
                      double eps, uint64_t seed = 0x57a6e003ULL);

}  // namespace wildgrad
