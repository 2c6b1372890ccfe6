#include "wildgrad/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wildgrad/rng.hpp"

namespace wildgrad {

// ============================================================
// Cutoff
// ============================================================

double CutoffAxis::value(double x) const {
  if (x <= r0 || x >= f1) return 0;
  if (x < r1) return smoothstep((x - r0) / (r1 - r0));
  if (x <= f0) return 1;
  return smoothstep((f1 - x) / (f1 - f0));
}

double CutoffAxis::slope(double x) const {
  if (x <= r0 || x >= f1) return 0;
  if (x < r1) return smoothstep_prime((x - r0) / (r1 - r0)) / (r1 - r0);
  if (x <= f0) return 0;
  return -smoothstep_prime((f1 - x) / (f1 - f0)) / (f1 - f0);
}

// ============================================================
// Regions
// ============================================================

bool region_contains(const SlabRegion& r, const Vec& x) {
  if (!r.inner.contains(x)) return false;
  const double t = slab_phase(r.a, r.phase0, r.delta, x);
  for (const auto& iv : r.intervals)
    if (t >= iv.first && t < iv.second) return true;
  return false;
}

std::vector<Box> slab_components(const SlabRegion& r) {
  if (r.intervals.empty()) return {};
  if (r.intervals.size() == 1 && r.intervals[0].first == 0 && r.intervals[0].second == 1)
    return {r.inner};
  if (r.axis < 0) return {};
  const double ad = r.a[r.axis];
  const double s0 = r.phase0 / ad;
  const double step = r.delta / ad;  // signed spatial length of one phase unit
  std::vector<Box> out;
  out.reserve(size_t(r.ell) * r.intervals.size());
  for (int64_t j = 0; j < r.ell; ++j)
    for (const auto& iv : r.intervals) {
      // Length from the interval alone: differencing the two endpoint
      // positions would cancel against the anchor s0 and lose most digits
      // once windows are many orders smaller than the anchor.
      Vec c = r.inner.center, h = r.inner.half;
      c[r.axis] = s0 + (double(j) + 0.5 * (iv.first + iv.second)) * step;
      h[r.axis] = 0.5 * (iv.second - iv.first) * std::fabs(step);
      out.push_back(Box(c, h));
    }
  return out;
}

// ============================================================
// Blocks
// ============================================================

BuildingBlock make_block(const WaveVector& gamma, double lambda, const Box& box, double eps) {
  validate_wave(gamma, "make_block");
  if (!(eps > 0 && eps < 1)) throw precondition_error("block eps must lie in (0,1), got " + str(eps));
  if (!(lambda >= 0 && lambda <= 1))
    throw precondition_error("block lambda must lie in [0,1], got " + str(lambda));
  if (box.dim() != gamma.a.n)
    throw precondition_error("block box dimension " + std::to_string(box.dim()) +
                             " does not match the wave direction dimension " +
                             std::to_string(gamma.a.n));
  const int n = box.dim();

  BuildingBlock blk;
  blk.gamma = gamma;
  blk.lambda = lambda;
  blk.eps = eps;
  blk.box = box;
  blk.profile = make_profile(lambda, eps);
  blk.trivial = blk.profile.trivial;

  // Per-axis measure margins: (1 - 2 rho)^n >= (1-eps)^{1/3} splits the
  // cube-root budget evenly across axes, so |inner| >= (1-eps)^{1/3} |box|.
  const double rho = 0.5 * (1 - std::pow(1 - eps, 1.0 / (3.0 * n)));
  Vec margin(n), inner_half(n);
  for (int d = 0; d < n; ++d) {
    margin[d] = rho * 2 * box.half[d];
    inner_half[d] = box.half[d] - margin[d];
  }
  blk.inner = Box(box.center, inner_half);

  const MatrixPair up = (1 - lambda) * gamma.pair();
  const MatrixPair down = -lambda * gamma.pair();

  if (blk.trivial) {
    // phi = 0 and (Dphi, Psi) = 0, which equals the pinned plateau value on
    // the side whose coefficient vanishes; that side is the whole inner box.
    SlabRegion full, none;
    full.inner = none.inner = blk.inner;
    full.a = none.a = Vec(n);
    full.axis = none.axis = -1;
    full.ell = 1;
    full.intervals = {{0.0, 1.0}};
    full.measure = blk.inner.volume();
    full.value = lambda == 1 ? up : down;
    none.value = lambda == 1 ? down : up;
    blk.gprime = lambda == 1 ? full : none;
    blk.gsecond = lambda == 1 ? none : full;
    blk.support = blk.inner;
    blk.axis = -1;
    if (!(full.measure >= (1 - eps) * box.volume()))
      throw internal_error("trivial block inner measure fell below its closed-form bound");
    return blk;
  }

  int axis = -1, nonzero = 0;
  for (int d = 0; d < n; ++d)
    if (gamma.a[d] != 0) {
      ++nonzero;
      axis = d;
    }
  if (nonzero != 1) axis = -1;
  blk.axis = axis;

  const double p_norm = norm(gamma.p);
  const double a_norm = norm(gamma.a);
  const double f_max = blk.profile.f_max;
  double span_a = 0;
  for (int d = 0; d < n; ++d) span_a += std::fabs(gamma.a[d]) * 2 * box.half[d];

  // Cutoff gradient bound for the error terms delta f p (x) Dzeta and the
  // matching pair in Psi. Margins on the oscillation axis sit in phase gaps
  // where f = 0, so only the other axes contribute.
  double dz_bound = 0;
  for (int d = 0; d < n; ++d) {
    if (d == axis) continue;
    dz_bound = std::max(dz_bound, 2 * smoothstep_max_slope / margin[d]);
  }
  dz_bound *= std::sqrt(double(n));
  const double err_coef = f_max * (p_norm + 2 * frob(gamma.B) / a_norm) * dz_bound;

  double need = span_a * f_max * p_norm / (0.9 * eps);
  if (err_coef > 0) need = std::max(need, span_a * err_coef / (0.45 * eps));
  const int64_t ell_cap = int64_t(1) << 20;
  if (!(need < double(ell_cap)))
    throw stage_bound_error("block needs about " + str(need) +
                            " oscillation periods, beyond the 2^20 cap; the box is too large for "
                            "eps = " + str(eps));
  int64_t ell = std::max<int64_t>(1, int64_t(std::ceil(need)));

  auto build = [&](int64_t ellv) {
    blk.ell = ellv;
    blk.cutoff.assign(n, CutoffAxis{});
    for (int d = 0; d < n; ++d) {
      if (d == axis) continue;
      const double lo = box.center[d] - box.half[d], hi = box.center[d] + box.half[d];
      blk.cutoff[d] = {lo + 0.25 * margin[d], lo + 0.75 * margin[d],
                       hi - 0.75 * margin[d], hi - 0.25 * margin[d]};
    }
    double axis_support_half = 0;
    if (axis >= 0) {
      const double lo = box.center[axis] - box.half[axis], hi = box.center[axis] + box.half[axis];
      const double M = margin[axis];
      // Lengths come from the stored half widths: differencing absolute
      // endpoints would cancel against the box position once cells are many
      // orders smaller than their coordinates, and the plateau measure floor
      // leaves only about eps/3 of slack.
      const double inner_len = 2 * (box.half[axis] - M);
      // The support spans exactly ell periods and the cutoff transitions sit
      // inside the leading and trailing phase gaps of their periods, where
      // the profile and its antiderivative vanish identically.
      const double m_t = std::min(0.5 * M, 0.8 * blk.profile.gap * inner_len / double(ellv));
      CutoffAxis& c = blk.cutoff[axis];
      c.r1 = lo + M;
      c.f0 = hi - M;
      c.r0 = c.r1 - m_t;
      c.f1 = c.f0 + m_t;
      axis_support_half = 0.5 * inner_len + m_t;
      const double period = (inner_len + 2 * m_t) / double(ellv);
      blk.delta = period * std::fabs(gamma.a[axis]);
      blk.phase0 = gamma.a[axis] * (gamma.a[axis] > 0 ? c.r0 : c.f1);
    } else {
      blk.delta = span_a / double(ellv);
      double ph = 0;
      for (int d = 0; d < n; ++d)
        ph += std::min(gamma.a[d] * (box.center[d] - box.half[d]),
                       gamma.a[d] * (box.center[d] + box.half[d]));
      blk.phase0 = ph;
    }
    Vec sh(n);
    for (int d = 0; d < n; ++d) sh[d] = box.half[d] - 0.25 * margin[d];
    if (axis >= 0) sh[axis] = axis_support_half;
    blk.support = Box(box.center, sh);
    blk.sup_phi = blk.delta * f_max * p_norm;

    auto mk = [&](const IntervalSet& iv, const MatrixPair& val) {
      SlabRegion r;
      r.inner = blk.inner;
      r.a = gamma.a;
      r.delta = blk.delta;
      r.phase0 = blk.phase0;
      r.axis = axis;
      r.ell = ellv;
      r.intervals = iv;
      r.value = val;
      if (iv.empty()) return r;
      if (axis >= 0) {
        // Every one of the ell plateau windows lies inside the inner box, so
        // the measure is the plateau phase length times the support length
        // times the inner cross section.
        double cross = 1;
        for (int d = 0; d < n; ++d)
          if (d != axis) cross *= 2 * blk.inner.half[d];
        double len = 0;
        for (const auto& p : iv) len += p.second - p.first;
        r.measure = len * (blk.delta / std::fabs(gamma.a[axis])) * double(ellv) * cross;
      } else {
        r.measure = periodic_slab_volume(blk.inner, gamma.a, blk.delta, iv);
      }
      return r;
    };
    blk.gprime = mk(blk.profile.plateau1(), up);
    blk.gsecond = mk(blk.profile.plateau2(), down);
  };

  const double volb = box.volume();
  const Segment seg{down, up};
  std::string why;
  auto verified = [&] {
    if (!(blk.sup_phi < eps)) {
      why = "sup|phi| bound " + str(blk.sup_phi) + " >= eps";
      return false;
    }
    if (!(blk.gprime.measure >= (1 - eps) * lambda * volb)) {
      why = "first plateau measure " + str(blk.gprime.measure) + " below its floor";
      return false;
    }
    if (!(blk.gsecond.measure >= (1 - eps) * (1 - lambda) * volb)) {
      why = "second plateau measure " + str(blk.gsecond.measure) + " below its floor";
      return false;
    }
    Rng rng(mix_seed(0xb10cULL, uint64_t(blk.ell), uint64_t(n)));
    double worst = 0;
    for (int s = 0; s < 256; ++s) {
      const Vec x = rng.point_in(blk.support);
      const BlockEval ev = eval_block(blk, x);
      if (norm_inf(ev.phi) >= eps) {
        why = "sampled sup|phi| reached eps";
        return false;
      }
      worst = std::max(worst, segment_distance(MatrixPair(ev.dphi, ev.psi), seg));
    }
    if (!(worst < eps)) {
      why = "sampled segment distance " + str(worst) + " >= eps";
      return false;
    }
    return true;
  };

  while (true) {
    build(ell);
    if (verified()) break;
    ell *= 2;
    if (ell > ell_cap)
      throw stage_bound_error("block verification failed at the period cap: " + why +
                              " (lambda=" + str(lambda) + " eps=" + str(eps) +
                              " ell=" + std::to_string(ell / 2) + " box volume=" +
                              str(volb) + ")");
  }
  return blk;
}

BlockEval eval_block(const BuildingBlock& blk, const Vec& x) {
  const int m = blk.gamma.p.n, n = blk.gamma.a.n;
  BlockEval ev{Vec(m), Mat(m, n), Mat(m, n)};
  if (blk.trivial) return ev;

  double part[max_dim];
  double zeta = 1;
  for (int d = 0; d < n; ++d) {
    part[d] = blk.cutoff[d].value(x[d]);
    if (part[d] == 0) return ev;
    zeta *= part[d];
  }
  Vec dzeta(n);
  for (int d = 0; d < n; ++d) {
    const double sl = blk.cutoff[d].slope(x[d]);
    if (sl == 0) continue;
    double prod = sl;
    for (int e = 0; e < n; ++e)
      if (e != d) prod *= part[e];
    dzeta[d] = prod;
  }

  const double t = slab_phase(blk.gamma.a, blk.phase0, blk.delta, x);
  const double qv = blk.profile.q(t);
  const double fv = blk.profile.f(t);
  const double zq = zeta * qv;
  const double df = blk.delta * fv;

  for (int i = 0; i < m; ++i) ev.phi[i] = df * zeta * blk.gamma.p[i];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ev.dphi.at(i, j) = zq * (blk.gamma.p[i] * blk.gamma.a[j]) + df * blk.gamma.p[i] * dzeta[j];

  const Mat& B = blk.gamma.B;
  bool b_zero = true;
  for (int i = 0; i < B.entries(); ++i)
    if (B.v[i] != 0) {
      b_zero = false;
      break;
    }
  if (!b_zero) {
    const double adz = dot(blk.gamma.a, dzeta);
    const Vec bdz = mat_vec(B, dzeta);
    const double coef = df / dot(blk.gamma.a, blk.gamma.a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ev.psi.at(i, j) = zq * B.at(i, j) + coef * (adz * B.at(i, j) - bdz[i] * blk.gamma.a[j]);
  }
  return ev;
}

double block_cutoff(const BuildingBlock& blk, const Vec& x) {
  if (blk.cutoff.empty()) return blk.inner.contains(x) ? 1.0 : 0.0;
  double zeta = 1;
  for (int d = 0; d < blk.gamma.a.n; ++d) zeta *= blk.cutoff[d].value(x[d]);
  return zeta;
}

}  // namespace wildgrad
