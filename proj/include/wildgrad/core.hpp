#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "wildgrad/common.hpp"

namespace wildgrad {

// Shared numeric foundation: segment geometry, exact halfspace and periodic
// slab volumes, Monte Carlo measure with confidence bounds, and dyadic cube
// covers. Exact formulas are the source of record; Monte Carlo is the audit.

/// Euclidean distance in pair space from x to the closed segment [alpha, beta].
double segment_distance(const MatrixPair& x, const Segment& s);

/// Exact Lebesgue volume of b intersected with {x : a . x <= c}.
double halfspace_box_volume(const Box& b, const Vec& a, double c);

/// Disjoint subintervals of [0,1), each as (lo, hi).
using IntervalSet = std::vector<std::pair<double, double>>;

/// Total length of an interval set.
double intervals_length(const IntervalSet& intervals);

/// Fractional phase frac((a . x - phase0) / delta) in [0,1), computed with a
/// compensated dot product and an exact period subtraction. The naive form
/// quantizes the fraction at ulp(a . x / delta), which destroys several
/// digits once the phase spans many periods or delta is many orders below
/// the coordinates.
double slab_phase(const Vec& a, double phase0, double delta, const Vec& x);

/// Exact volume of {x in b : frac(a . x / delta) in intervals}, as a finite
/// sum of halfspace volume differences over every period meeting b. Throws a
/// precondition error when the number of periods exceeds period_cap.
double periodic_slab_volume(const Box& b, const Vec& a, double delta,
                            const IntervalSet& intervals,
                            int64_t period_cap = int64_t(1) << 22);

struct McResult {
  double estimate;    // volume-fraction estimate times |b|
  double half_width;  // 99% confidence half-width, same units
};

/// Monte Carlo volume of {x in b : indicator(x)}. Deterministic for a fixed
/// seed and any worker count: fixed-size chunks with per-chunk RNG streams,
/// integer hit counts reduced in chunk order. indicator must be pure.
McResult mc_measure(const std::function<bool(const Vec&)>& indicator, const Box& b,
                    int64_t samples, uint64_t seed);

/// Classifier for the slab region {x : frac(a . x / delta) in intervals}:
/// +1 when the closed box maps entirely into the union, -1 when the overlap
/// is at most a null set, 0 otherwise. Exact interval arithmetic on a . x.
std::function<int(const Box&)> slab_classifier(const Vec& a, double delta,
                                               IntervalSet intervals);

/// A region to be covered by dyadic cells: root boxes to subdivide, an exact
/// classifier (+1 cell inside the region, -1 disjoint from it, 0 straddles),
/// and the exact region measure.
struct CoverTarget {
  std::vector<Box> roots;
  std::function<int(const Box&)> classify;
  double measure = 0;
};

struct CoverResult {
  std::vector<Box> boxes;  // pairwise disjoint, inside the target
  double covered = 0;      // exact total volume of boxes
  double achieved = 0;     // covered / target measure
  bool ok = false;         // achieved >= requested fill
};

/// Deterministic Vitali-type cover of a general region by dyadic cells of
/// radius <= max_radius, aiming for the requested fill fraction. Breadth
/// first by depth; cells fully inside are kept once small enough, straddling
/// cells are subdivided. Stops early once the fill is reached. When the
/// depth or box budget runs out the achieved fraction is reported instead
/// of throwing.
CoverResult vitali_cover_region(const CoverTarget& target, double max_radius, double fill,
                                int max_depth = 48, uint64_t max_boxes = uint64_t(1) << 22);

/// Cover of a box union: every dyadic cell of a root box lies inside it, so
/// the only failure mode is the depth limit cutting off before cells shrink
/// below max_radius.
CoverResult vitali_cover(const Domain& target, double max_radius, double fill,
                         int max_depth = 48);

}  // namespace wildgrad
