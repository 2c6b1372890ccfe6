#include "wildgrad/core.hpp"

#include <algorithm>
#include <cmath>

#include "wildgrad/parallel.hpp"
#include "wildgrad/rng.hpp"

namespace wildgrad {

double segment_distance(const MatrixPair& x, const Segment& s) {
  MatrixPair d = s.beta - s.alpha;
  double dd = dot(d, d);
  double t = 0;
  if (dd > 0) t = std::clamp(dot(x - s.alpha, d) / dd, 0.0, 1.0);
  return dist(x, s.alpha + t * d);
}

// ============================================================
// Exact halfspace and slab volumes
// ============================================================

namespace {

// Fraction of the unit cube [0,1]^k under sum_i w_i u_i <= t, all w_i > 0:
// inclusion-exclusion over corner simplices,
//   (1/(k! prod w)) * sum_J (-1)^|J| (t - sum_{i in J} w_i)_+^k.
double unit_cube_fraction(const std::vector<double>& w, double t) {
  int k = (int)w.size();
  double norm = 1;
  for (int i = 0; i < k; ++i) norm *= (i + 1) * w[i];
  double sum = 0;
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    double arg = t;
    int bits = 0;
    for (int i = 0; i < k; ++i)
      if (mask >> i & 1) {
        arg -= w[i];
        ++bits;
      }
    if (arg <= 0) continue;
    double term = 1;
    for (int i = 0; i < k; ++i) term *= arg;
    sum += (bits & 1) ? -term : term;
  }
  return sum / norm;
}

}  // namespace

double halfspace_box_volume(const Box& b, const Vec& a, double c) {
  if (!(norm(a) > 0)) throw precondition_error("halfspace_box_volume: direction a is zero");
  double vol = b.volume();
  // Map b onto the unit cube: x = lo + diag(side) u, so a.x <= c becomes
  // sum w_i u_i <= t with w_i = a_i * side_i.
  double t = c - dot(a, b.lo());
  std::vector<double> w;
  w.reserve((size_t)b.dim());
  for (int i = 0; i < b.dim(); ++i) {
    double wi = a[i] * 2 * b.half[i];
    if (wi == 0) continue;
    if (wi < 0) {
      t -= wi;
      wi = -wi;
    }
    w.push_back(wi);
  }
  if (w.empty()) return t >= 0 ? vol : 0;
  double total = 0;
  for (double wi : w) total += wi;
  if (t <= 0) return 0;
  if (t >= total) return vol;
  // The complement form keeps the alternating sum well conditioned when the
  // slice is nearly the whole cube.
  double frac = t <= 0.5 * total ? unit_cube_fraction(w, t)
                                 : 1 - unit_cube_fraction(w, total - t);
  return std::clamp(frac, 0.0, 1.0) * vol;
}

double intervals_length(const IntervalSet& intervals) {
  double t = 0;
  for (const auto& [lo, hi] : intervals) t += hi - lo;
  return t;
}

double slab_phase(const Vec& a, double phase0, double delta, const Vec& x) {
  // u = a . x - phase0 as an unevaluated sum s + comp (TwoSum + fma product
  // corrections), so the period index below can be removed without first
  // rounding u to one double.
  double s = -phase0;
  double comp = 0;
  for (int d = 0; d < a.n; ++d) {
    double prod = a[d] * x[d];
    double perr = std::fma(a[d], x[d], -prod);
    double t0 = s + prod;
    double serr = (std::fabs(s) >= std::fabs(prod)) ? ((s - t0) + prod)
                                                    : ((prod - t0) + s);
    s = t0;
    comp += perr + serr;
  }
  double j = std::floor((s + comp) / delta);
  double jd = j * delta;
  double jerr = std::fma(j, delta, -jd);
  double frac = (((s - jd) - jerr) + comp) / delta;
  if (frac < 0) frac += 1;
  if (frac >= 1) frac -= 1;
  return frac;
}

namespace {

void validate_intervals(const IntervalSet& intervals) {
  IntervalSet s = intervals;
  std::sort(s.begin(), s.end());
  for (size_t i = 0; i < s.size(); ++i) {
    if (!(s[i].first >= 0 && s[i].first < s[i].second && s[i].second <= 1))
      throw precondition_error("periodic_slab_volume: interval outside [0,1) or empty");
    if (i + 1 < s.size() && s[i].second > s[i + 1].first + 1e-15)
      throw precondition_error("periodic_slab_volume: overlapping intervals");
  }
}

}  // namespace

double periodic_slab_volume(const Box& b, const Vec& a, double delta,
                            const IntervalSet& intervals, int64_t period_cap) {
  if (!(delta > 0)) throw precondition_error("periodic_slab_volume: delta must be positive");
  if (!(norm(a) > 0)) throw precondition_error("periodic_slab_volume: direction a is zero");
  validate_intervals(intervals);
  if (intervals.empty()) return 0;
  double s_mid = dot(a, b.center);
  double s_ext = 0;
  for (int i = 0; i < b.dim(); ++i) s_ext += std::fabs(a[i]) * b.half[i];
  int64_t j0 = (int64_t)std::floor((s_mid - s_ext) / delta) - 1;
  int64_t j1 = (int64_t)std::floor((s_mid + s_ext) / delta) + 1;
  if (j1 - j0 + 1 > period_cap)
    throw precondition_error("periodic_slab_volume: " + std::to_string(j1 - j0 + 1) +
                             " periods exceed the cap; raise delta or shrink the box");
  double total = 0;
  for (int64_t j = j0; j <= j1; ++j)
    for (const auto& [lo, hi] : intervals)
      total += halfspace_box_volume(b, a, ((double)j + hi) * delta) -
               halfspace_box_volume(b, a, ((double)j + lo) * delta);
  return std::clamp(total, 0.0, b.volume());
}

// ============================================================
// Monte Carlo measure
// ============================================================

McResult mc_measure(const std::function<bool(const Vec&)>& indicator, const Box& b,
                    int64_t samples, uint64_t seed) {
  if (samples < 100) throw precondition_error("mc_measure: need at least 100 samples");
  int64_t nchunks = (samples + chunk_items - 1) / chunk_items;
  std::vector<int64_t> counts = map_chunks<int64_t>(nchunks, [&](int64_t c) {
    int64_t k = std::min(chunk_items, samples - c * chunk_items);
    Rng rng(mix_seed(seed, 0x6d63, (uint64_t)c));
    int64_t hits = 0;
    for (int64_t i = 0; i < k; ++i)
      if (indicator(rng.point_in(b))) ++hits;
    return hits;
  });
  int64_t hits = 0;
  for (int64_t h : counts) hits += h;
  double vol = b.volume();
  double p = (double)hits / (double)samples;
  constexpr double z99 = 2.5758293035489004;
  return {p * vol, z99 * std::sqrt(p * (1 - p) / (double)samples) * vol};
}

std::function<int(const Box&)> slab_classifier(const Vec& a, double delta,
                                               IntervalSet intervals) {
  if (!(delta > 0)) throw precondition_error("slab_classifier: delta must be positive");
  if (!(norm(a) > 0)) throw precondition_error("slab_classifier: direction a is zero");
  validate_intervals(intervals);
  std::sort(intervals.begin(), intervals.end());
  return [a, delta, intervals](const Box& cell) -> int {
    double s_mid = dot(a, cell.center);
    double s_ext = 0;
    for (int i = 0; i < cell.dim(); ++i) s_ext += std::fabs(a[i]) * cell.half[i];
    double len = 2 * s_ext / delta;
    if (intervals.empty()) return -1;
    if (len >= 1) return intervals_length(intervals) >= 1 ? 1 : 0;
    double t0 = (s_mid - s_ext) / delta;
    double fr = t0 - std::floor(t0);
    double t1 = fr + len;  // fr in [0,1), t1 < 2
    bool overlaps = false;
    for (const auto& [lo, hi] : intervals) {
      if (t1 > lo && fr < hi) overlaps = true;
      if (t1 > lo + 1 && fr < hi + 1) overlaps = true;
    }
    if (!overlaps) return -1;
    if (t1 <= 1) {
      for (const auto& [lo, hi] : intervals)
        if (fr >= lo && t1 <= hi) return 1;
    } else {
      // The cell straddles the period boundary: its image is
      // [fr, 1) u [0, t1 - 1].
      bool head = false, tail = false;
      for (const auto& [lo, hi] : intervals) {
        if (hi >= 1 && fr >= lo) head = true;
        if (lo <= 0 && t1 - 1 <= hi) tail = true;
      }
      if (head && tail) return 1;
    }
    return 0;
  };
}

// ============================================================
// Dyadic covers
// ============================================================

namespace {

void subdivide(const Box& b, std::vector<Box>& out) {
  int n = b.dim();
  Vec h(n);
  for (int i = 0; i < n; ++i) h[i] = b.half[i] / 2;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    Vec c(n);
    for (int i = 0; i < n; ++i) c[i] = b.center[i] + ((mask >> i & 1) ? h[i] : -h[i]);
    out.push_back(Box(c, h));
  }
}

}  // namespace

CoverResult vitali_cover_region(const CoverTarget& target, double max_radius, double fill,
                                int max_depth, uint64_t max_boxes) {
  if (target.roots.empty()) throw precondition_error("vitali_cover: empty target");
  if (!(target.measure > 0)) throw precondition_error("vitali_cover: target has no measure");
  if (!(max_radius > 0)) throw precondition_error("vitali_cover: max_radius must be positive");
  if (!(fill > 0 && fill <= 1)) throw precondition_error("vitali_cover: fill must be in (0,1]");

  CoverResult res;
  double goal = fill * target.measure;
  double tol = 1e-12 * std::max(target.measure, 1.0);
  std::vector<Box> level = target.roots, next;
  bool budget_hit = false;
  for (int depth = 0; depth <= max_depth && !level.empty() && !budget_hit; ++depth) {
    next.clear();
    for (const Box& cell : level) {
      int cls = target.classify(cell);
      if (cls < 0) continue;
      if (cls > 0 && cell.radius() <= max_radius) {
        res.boxes.push_back(cell);
        res.covered += cell.volume();
      } else if (depth < max_depth) {
        subdivide(cell, next);
      }
      if (res.boxes.size() >= max_boxes || next.size() >= max_boxes) {
        budget_hit = true;
        break;
      }
    }
    if (res.covered >= goal - tol) break;
    std::swap(level, next);
  }
  res.achieved = res.covered / target.measure;
  res.ok = res.covered >= goal - tol;
  return res;
}

CoverResult vitali_cover(const Domain& target, double max_radius, double fill, int max_depth) {
  if (target.boxes.empty()) throw precondition_error("vitali_cover: empty target");
  CoverTarget t;
  t.roots = target.boxes;
  t.classify = [](const Box&) { return 1; };
  t.measure = target.volume();
  return vitali_cover_region(t, max_radius, fill, max_depth);
}

}  // namespace wildgrad
