#pragma once

#include <memory>
#include <string>
#include <vector>

#include "wildgrad/blocks.hpp"
#include "wildgrad/scenario.hpp"
#include "wildgrad/tnconfig.hpp"

namespace wildgrad {

// Nested oscillatory constructions. One building block replaces a convex
// mixture by its two endpoint values on most of a box; a staircase chains
// blocks through the plateau regions of their parents until every pinned
// value sits on a corner. Towers are stored factored: each nesting depth
// keeps a single template block plus the lattice of translated copies, so
// measures stay exact products and evaluation walks one template per depth.

// ============================================================
// Host sets
// ============================================================

/// Identical translated copies of one cell box, used to place the next
/// depth of blocks inside a plateau region. Axis-aligned regions are tiled
/// by their period windows (one stride), trivial regions by the single
/// inner box, and slanted regions by the kept cells of a uniform grid.
struct HostSet {
  Box cell;
  int64_t count = 0;
  int axis = -1;      // instance t shifts t*step along this axis, -1 otherwise
  double step = 0;
  Vec pitch;          // grid spacing per dimension (slanted case)
  std::vector<std::array<int32_t, max_dim>> lattice;  // kept grid cells
  double hosted = 0;  // count * cell volume
  double fill = 0;    // hosted / region measure, 0 for an empty region
};

/// Translation taking the template cell onto instance t.
Vec host_offset(const HostSet& h, int64_t t);

/// Instance whose cell contains x, or -1 when x falls between cells.
int64_t host_locate(const HostSet& h, const Vec& x);

/// Host cells for a plateau region. Axis and trivial regions tile exactly
/// (fill 1); slanted regions get a uniform grid of cubes classified
/// strictly inside the region, refined until the kept volume reaches
/// fill_min of the region measure. Raises an internal error when the grid
/// budget is exhausted before the fill target. An empty region yields an
/// empty host set.
HostSet refine_hosts(const SlabRegion& region, double fill_min,
                     int64_t budget = int64_t(1) << 21);

// ============================================================
// Perturbation towers
// ============================================================

/// One depth of a nested construction: a template block, the placement of
/// its instances inside a single parent instance, and the towers nested in
/// its two plateau families. Offsets compose down the tree, so a point is
/// evaluated by locating at most one instance per depth.
struct PerturbNode;

/// A construction grafted into the rising plateau of a host node. The body
/// lives in its own frame (typically centered at the origin) and may be
/// shared between graft sites; `shift` moves the template cell onto the
/// body frame after the host offset is subtracted. Bodies are treated as
/// immutable once shared, so instance counts are carried by the site, not
/// scaled into the body.
struct PerturbGraft {
  HostSet hosts;
  Vec shift;
  std::shared_ptr<const PerturbNode> body;
};

struct PerturbNode {
  BuildingBlock block;
  HostSet hosts;       // placement inside one parent plateau instance
  double instances = 1;  // total template copies across the construction
  std::unique_ptr<PerturbNode> on_prime;   // nested in the rising plateau
  std::unique_ptr<PerturbNode> on_second;  // nested in the falling plateau
  std::vector<PerturbGraft> grafts;        // later refinements of the rising plateau
};

/// Sum of (phi, Dphi, Psi) over every block instance containing x, with x
/// in the frame of the root template.
BlockEval eval_perturbation(const PerturbNode& root, const Vec& x);

/// Exact bound on sup |phi| over the tree: one instance per depth is
/// active, so bounds add along the deepest chain.
double perturb_sup_phi(const PerturbNode& root);

// ============================================================
// Region trees
// ============================================================

/// Region descriptor in the frame of its depth's template cell, replicated
/// over the instance lattice. Measures are totals across instances and
/// exact; corner 0 marks structural regions and the zero-perturbation
/// residual.
struct RegionNode {
  std::string stage;
  int corner = 0;        // pinned corner label, 0 when structural
  MatrixPair value;      // field value carried on the region
  SlabRegion region;     // template-frame descriptor
  double instances = 1;
  double measure = 0;    // total across instances
  double mc_half = 0;    // half-width when measured by sampling, 0 = exact
  std::vector<RegionNode> children;
};

struct RegionTree {
  Box root;
  std::vector<RegionNode> nodes;

  /// Total measure pinned to corner j across the tree.
  double corner_measure(int j) const;
  /// Total measure over all corner-labeled regions.
  double labeled_measure() const;
  /// Every node pinned to corner j, depth-first order.
  std::vector<const RegionNode*> labeled(int j) const;
};

// ============================================================
// Corner staircases
// ============================================================

/// Shape of a corner staircase: rounds and accuracy chosen so that the
/// uncovered remainder tau^rounds and the per-depth losses together stay
/// inside delta.
struct StaircasePlan {
  int i = 0;
  double lambda = 0;
  double delta = 0;
  double tau = 0;        // product of (1 - chi_k), remainder per round
  int rounds = 0;        // smallest count with tau^rounds <= 1 - sqrt(1-delta)
  double eps = 0;        // dyadic per-depth accuracy
  int depths = 0;        // 1 + rounds * N template depths, 1 when lambda = 1
};

/// Round and accuracy selection for a corner staircase. Requires delta in
/// (0, 1) and lambda in [0, 1].
StaircasePlan plan_staircase(const TNConfig& cfg, int i, double lambda,
                             double delta);

struct CornerOscillation {
  PerturbNode node;
  RegionTree tree;
  StaircasePlan plan;
  MatrixPair eta;               // unperturbed value on the box
  double sup_phi = 0;           // proven bound, below delta
  std::vector<double> measured;  // pinned measure per corner, exact
  std::vector<double> required;  // (1-delta) nu_j |box| floors
};

/// Replace the mixture eta = lambda xi_i + (1-lambda) pi_i by the corner
/// values on most of the box: a split block separates the xi_i share from
/// the anchor share, then each round peels one corner per depth off the
/// anchor in descending cyclic order. Verifies the floors measured[j] >=
/// required[j], containment of eta + (Dphi, Psi) in the delta-neighborhood
/// of the corner segments, sup |phi| < delta, and the pinned plateau values
/// at sampled interior points; violations raise internal errors naming the
/// bound. lambda = 1 yields a single trivial region with zero perturbation.
CornerOscillation oscillate_to_corners(const TNConfig& cfg, int i,
                                       double lambda, const Box& box,
                                       double delta);

// ============================================================
// Membership steps
// ============================================================

struct SigmaStep {
  PerturbNode node;
  RegionTree tree;
  MatrixPair y;                  // reconstructed start value
  double delta = 0;              // accuracy fed to the split and both towers
  double sup_phi = 0;            // proven bound, below tau
  std::vector<double> measured;  // |G_j| per corner, both endpoint families
  std::vector<double> required;  // (1-tau) mixture floors
  std::vector<MatrixPair> pinned_zeta;  // X_j = zeta_j(mu, rho), empty when q = 0
  std::vector<MatrixPair> pinned_pi;    // X'_j = zeta_j(mu, rho'), empty when q = 1
};

/// Advance a segment-set member one level: the witness value
/// y = q zeta_i(lambda', rho) + (1-q) pi_i(rho') is perturbed so that most
/// of the box pins values from the level-mu image families at rho and
/// rho', each inside its branch membership set. A split block separates
/// the two endpoint shares, then a corner staircase runs on each side
/// (skipped for q = 1 or q = 0). The accuracy is derived from cached gap
/// estimates of the membership sets at radius r inside radius-r sets of
/// level mu, capped by tau. Verifies the mixture floors, containment of
/// every sampled perturbed value in the level-mu segment sets, and
/// sup |phi| < tau. Requires delta2 <= lambda' <= lambda <= mu < 1,
/// endpoint parameters strictly inside the radius-r ball, an endpoint
/// difference in the wave cone, and mu kappa_j(rho) > 1 for both
/// parameters.
SigmaStep step_in_sigma(const Scenario& s, const Decomposition& dec,
                        double lambda, double mu, double r, const Box& box,
                        double tau);

}  // namespace wildgrad
