#pragma once

#include <cstdint>
#include <vector>

#include "wildgrad/core.hpp"

namespace wildgrad {

// Oscillatory building blocks: a 1-periodic mean-zero profile q with exact
// plateau intervals, its antiderivative f, and the compactly supported pair
//   phi(x) = delta h(x) p,   h = zeta(x) f(a.x/delta),
//   Psi    = zeta q B + (delta f / |a|^2) [(a.Dzeta) B - (B Dzeta) (x) a],
// which oscillates between -lambda gamma and (1-lambda) gamma and is
// divergence-free row by row for any h.

// ============================================================
// Smooth steps
// ============================================================

/// C-infinity step: 0 for u <= 0, 1 for u >= 1, strictly increasing between.
double smoothstep(double u);
double smoothstep_prime(double u);
/// Integral of smoothstep from 0 to v (exactly 1/2 at v = 1).
double smoothstep_integral(double v);
/// Largest slope of the step (attained at u = 1/2).
inline constexpr double smoothstep_max_slope = 2.0;

// ============================================================
// Profile
// ============================================================

/// One period of q on [0,1): two exact plateaus at 1-lambda and -lambda,
/// antisymmetric transition pairs with side-proportional widths (so the mean
/// vanishes identically), and three zero gaps. f = q's antiderivative is 0 on
/// the leading and trailing gap, which is what lets cutoff margins sit in
/// those phases without contributing error terms.
struct Profile {
  double lambda = 0, eps = 0;
  bool trivial = false;  // lambda in {0,1}: q = f = 0

  double gap = 0;        // each of the three zero-gap lengths
  double w = 0;          // base transition width (w1 = w lambda, w2 = w (1-lambda))
  double w1 = 0, w2 = 0;
  double i1 = 0, i2 = 0;  // plateau lengths (1-eps)^{1/3} lambda, (1-eps)^{1/3}(1-lambda)
  // Segment starts: gap0 | rise1 | I1 | fall1 | gap1 | fall2 | I2 | rise2 | gap2.
  double b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0, b7 = 0, b8 = 0;
  double f_mid = 0;  // f on the middle gap; also sup f
  double f_max = 0;

  /// Plateau phase intervals.
  IntervalSet plateau1() const { return trivial || lambda == 0 ? IntervalSet{} : IntervalSet{{b2, b3}}; }
  IntervalSet plateau2() const { return trivial || lambda == 1 ? IntervalSet{} : IntervalSet{{b6, b7}}; }

  /// 1-periodic profile value, -lambda <= q <= 1-lambda.
  double q(double t) const;
  /// 1-periodic antiderivative with f(0) = 0 and f = 0 on both outer gaps.
  double f(double t) const;
};

Profile make_profile(double lambda, double eps);

// ============================================================
// Blocks
// ============================================================

/// Per-axis cutoff: 0 until r0, smooth rise on [r0,r1], 1 on [r1,f0],
/// smooth fall on [f0,f1], 0 after.
struct CutoffAxis {
  double r0 = 0, r1 = 0, f0 = 0, f1 = 0;
  double value(double x) const;
  double slope(double x) const;
};

/// Exactly measurable plateau region: the inner cutoff box intersected with
/// {x : frac((a.x - phase0)/delta) in intervals}. intervals == {{0,1}} means
/// the whole inner box (trivial blocks).
struct SlabRegion {
  Box inner;
  Vec a;
  double delta = 1;
  double phase0 = 0;
  int axis = -1;      // oscillation axis, -1 for generic directions
  int64_t ell = 0;    // period count across the support (axis case)
  IntervalSet intervals;
  double measure = 0;  // exact volume
  MatrixPair value;    // the pinned (Dphi, Psi) value on the region
};

bool region_contains(const SlabRegion& r, const Vec& x);

/// Disjoint component boxes of an axis-aligned or trivial region, one per
/// period window, each spanning the full cross extents of the inner box.
/// Empty for generic directions.
std::vector<Box> slab_components(const SlabRegion& r);

struct BuildingBlock {
  WaveVector gamma;
  double lambda = 0, eps = 0;
  Box box;
  Profile profile;
  bool trivial = false;
  int axis = -1;             // single nonzero component of a, else -1
  double delta = 1;          // oscillation scale
  int64_t ell = 1;           // periods across the support along the axis
  double phase0 = 0;         // a . anchor; phase t = (a.x - phase0)/delta
  std::vector<CutoffAxis> cutoff;
  Box inner;                 // zeta == 1
  Box support;               // zeta == 0 outside (strictly inside box)
  double sup_phi = 0;        // delta * f_max * |p|, an exact upper bound
  SlabRegion gprime;         // (Dphi,Psi) = (1-lambda) gamma here
  SlabRegion gsecond;        // (Dphi,Psi) = -lambda gamma here
};

struct BlockEval {
  Vec phi;
  Mat dphi;
  Mat psi;
};

/// Build a block whose plateau measures satisfy
///   |G'| >= (1-eps) lambda |box|,   |G''| >= (1-eps)(1-lambda) |box|
/// exactly, with sup|phi| < eps and sampled segment containment within eps.
/// The period count is doubled from a closed-form heuristic until all checks
/// pass (cap 2^20, then a construction error naming the failing check).
BuildingBlock make_block(const WaveVector& gamma, double lambda, const Box& box, double eps);

BlockEval eval_block(const BuildingBlock& blk, const Vec& x);

/// zeta and its gradient at x (diagnostics and error-term audits).
double block_cutoff(const BuildingBlock& blk, const Vec& x);

}  // namespace wildgrad
