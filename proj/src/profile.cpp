#include "wildgrad/blocks.hpp"

#include <cmath>
#include <vector>

namespace wildgrad {

// ============================================================
// Smooth step and its integral
// ============================================================

namespace {

// exp(-1/u) underflows to an exact 0 for u < 1/745, so the zero branches
// below are reached smoothly.
double bump(double u) { return u <= 0 ? 0.0 : std::exp(-1.0 / u); }
double bump_prime(double u) { return u <= 0 ? 0.0 : std::exp(-1.0 / u) / (u * u); }

}  // namespace

double smoothstep(double u) {
  if (u <= 0) return 0;
  if (u >= 1) return 1;
  const double gu = bump(u);
  return gu / (gu + bump(1 - u));
}

double smoothstep_prime(double u) {
  if (u <= 0 || u >= 1) return 0;
  const double gu = bump(u), gv = bump(1 - u);
  const double den = gu + gv;
  return (bump_prime(u) * gv + gu * bump_prime(1 - u)) / (den * den);
}

namespace {

// Cumulative integral of smoothstep on [0, 1/2], tabulated once on a uniform
// grid with 16-point Gauss-Legendre panel integrals and evaluated as a cubic
// Hermite spline (nodal derivatives are smoothstep itself, so the spline's
// derivative is exact at the nodes). The cell count keeps the derivative
// error of the spline below 1e-8, well under the finite-difference
// tolerances used to audit fields built from it.
constexpr int spline_cells = 8192;

struct StepTable {
  double h;
  std::vector<double> val;  // spline_cells + 1 nodes
  std::vector<double> der;
};

const StepTable& step_table() {
  static const StepTable table = [] {
    static const double gl_x[8] = {
        0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
        0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
    static const double gl_w[8] = {
        0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
        0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};
    StepTable t;
    t.h = 0.5 / spline_cells;
    t.val.resize(spline_cells + 1);
    t.der.resize(spline_cells + 1);
    t.val[0] = 0;
    for (int i = 0; i <= spline_cells; ++i) t.der[i] = smoothstep(i * t.h);
    for (int i = 0; i < spline_cells; ++i) {
      const double mid = (i + 0.5) * t.h, half = 0.5 * t.h;
      double panel = 0;
      for (int k = 0; k < 8; ++k)
        panel += gl_w[k] * (smoothstep(mid - half * gl_x[k]) + smoothstep(mid + half * gl_x[k]));
      t.val[i + 1] = t.val[i] + half * panel;
    }
    return t;
  }();
  return table;
}

double step_integral_low(double v) {
  const StepTable& t = step_table();
  int i = static_cast<int>(v / t.h);
  if (i >= spline_cells) i = spline_cells - 1;
  const double s = (v - i * t.h) / t.h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * t.val[i] + (s3 - 2 * s2 + s) * t.h * t.der[i] +
         (-2 * s3 + 3 * s2) * t.val[i + 1] + (s3 - s2) * t.h * t.der[i + 1];
}

}  // namespace

double smoothstep_integral(double v) {
  if (v <= 0) return 0;
  if (v >= 1) return 0.5 + (v - 1);
  if (v <= 0.5) return step_integral_low(v);
  return v - 0.5 + step_integral_low(1 - v);
}

// ============================================================
// Profile
// ============================================================

Profile make_profile(double lambda, double eps) {
  if (!(eps > 0 && eps < 1)) throw precondition_error("profile eps must lie in (0,1), got " + str(eps));
  if (!(lambda >= 0 && lambda <= 1))
    throw precondition_error("profile lambda must lie in [0,1], got " + str(lambda));

  Profile pr;
  pr.lambda = lambda;
  pr.eps = eps;
  if (lambda == 0 || lambda == 1) {
    pr.trivial = true;
    return pr;
  }

  const double gI = std::cbrt(1 - eps);
  pr.i1 = gI * lambda;
  pr.i2 = gI * (1 - lambda);
  pr.w = std::min(0.02, (1 - gI) / 8);
  pr.w1 = pr.w * lambda;
  pr.w2 = pr.w * (1 - lambda);
  pr.gap = (1 - gI - 2 * pr.w) / 3;

  pr.b1 = pr.gap;
  pr.b2 = pr.b1 + pr.w1;
  pr.b3 = pr.b2 + pr.i1;
  pr.b4 = pr.b3 + pr.w1;
  pr.b5 = pr.b4 + pr.gap;
  pr.b6 = pr.b5 + pr.w2;
  pr.b7 = pr.b6 + pr.i2;
  pr.b8 = pr.b7 + pr.w2;

  const double hi = 1 - lambda;
  pr.f_mid = hi * pr.w1 + hi * pr.i1;  // rise + plateau + fall integrals
  pr.f_max = pr.f_mid;
  return pr;
}

double Profile::q(double t) const {
  if (trivial) return 0;
  t -= std::floor(t);
  const double hi = 1 - lambda;
  if (t < b1) return 0;
  if (t < b2) return hi * smoothstep((t - b1) / w1);
  if (t < b3) return hi;
  if (t < b4) return hi * smoothstep((b4 - t) / w1);
  if (t < b5) return 0;
  if (t < b6) return -lambda * smoothstep((t - b5) / w2);
  if (t < b7) return -lambda;
  if (t < b8) return -lambda * smoothstep((b8 - t) / w2);
  return 0;
}

double Profile::f(double t) const {
  if (trivial) return 0;
  t -= std::floor(t);
  const double hi = 1 - lambda;
  const double f_i1 = hi * w1 * 0.5;            // after rise1
  const double f_fall1 = f_i1 + hi * i1;        // after I1
  const double f_i2 = f_mid - lambda * w2 * 0.5;
  const double f_rise2 = f_i2 - lambda * i2;
  if (t < b1) return 0;
  if (t < b2) return hi * w1 * smoothstep_integral((t - b1) / w1);
  if (t < b3) return f_i1 + hi * (t - b2);
  if (t < b4) return f_fall1 + hi * w1 * (0.5 - smoothstep_integral((b4 - t) / w1));
  if (t < b5) return f_mid;
  if (t < b6) return f_mid - lambda * w2 * smoothstep_integral((t - b5) / w2);
  if (t < b7) return f_i2 - lambda * (t - b6);
  if (t < b8) return f_rise2 - lambda * w2 * (0.5 - smoothstep_integral((b8 - t) / w2));
  return 0;
}

}  // namespace wildgrad
