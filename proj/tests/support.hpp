#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

// Small self-contained helpers used by tests as independent oracles.

namespace testsupport {

/// Dense linear solve with partial pivoting; A is row-major k x k.
inline std::vector<double> gauss_solve(std::vector<double> A, std::vector<double> b) {
  int k = (int)b.size();
  for (int col = 0; col < k; ++col) {
    int piv = col;
    for (int r = col + 1; r < k; ++r)
      if (std::abs(A[(size_t)r * k + col]) > std::abs(A[(size_t)piv * k + col])) piv = r;
    if (A[(size_t)piv * k + col] == 0) throw std::runtime_error("gauss_solve: singular");
    if (piv != col) {
      for (int c = 0; c < k; ++c) std::swap(A[(size_t)piv * k + c], A[(size_t)col * k + c]);
      std::swap(b[(size_t)piv], b[(size_t)col]);
    }
    for (int r = col + 1; r < k; ++r) {
      double f = A[(size_t)r * k + col] / A[(size_t)col * k + col];
      if (f == 0) continue;
      for (int c = col; c < k; ++c) A[(size_t)r * k + c] -= f * A[(size_t)col * k + c];
      b[(size_t)r] -= f * b[(size_t)col];
    }
  }
  std::vector<double> x((size_t)k);
  for (int r = k - 1; r >= 0; --r) {
    double s = b[(size_t)r];
    for (int c = r + 1; c < k; ++c) s -= A[(size_t)r * k + c] * x[(size_t)c];
    x[(size_t)r] = s / A[(size_t)r * k + r];
  }
  return x;
}

/// Adaptive Simpson quadrature with absolute tolerance tol.
template <class F>
inline double simpson_rec(const F& f, double a, double b, double fa, double fm, double fb,
                          double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6 * (fa + 4 * flm + fm);
  double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
    return left + right + (left + right - whole) / 15;
  return simpson_rec(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

template <class F>
inline double integrate(const F& f, double a, double b, double tol = 1e-13) {
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48);
}

/// Independent solve of the cyclic system P_{k+1} = t_k X_k + (1-t_k) P_k
/// (1-based cyclic indices collapsed to 0-based storage).
inline std::vector<double> cyclic_fixed_point(const std::vector<double>& t,
                                              const std::vector<double>& X) {
  int N = (int)t.size();
  std::vector<double> A((size_t)N * N, 0.0), b((size_t)N, 0.0);
  for (int k = 0; k < N; ++k) {
    int next = (k + 1) % N;
    A[(size_t)next * N + next] += 1;
    A[(size_t)next * N + k] -= 1 - t[(size_t)k];
    b[(size_t)next] = t[(size_t)k] * X[(size_t)k];
  }
  return gauss_solve(std::move(A), std::move(b));
}

}  // namespace testsupport
