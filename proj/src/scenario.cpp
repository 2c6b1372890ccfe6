#include "wildgrad/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "wildgrad/rng.hpp"
#include "wildgrad/tnconfig.hpp"

namespace wildgrad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ============================================================
// Small dense linear algebra
// ============================================================

/// Solve a k x k system in place by Gaussian elimination with partial
/// pivoting. Returns false on a (numerically) singular matrix.
bool gauss_solve(int k, std::vector<double> a, std::vector<double>& b) {
  for (int col = 0; col < k; ++col) {
    int piv = col;
    for (int row = col + 1; row < k; ++row)
      if (std::fabs(a[(size_t)row * k + col]) > std::fabs(a[(size_t)piv * k + col]))
        piv = row;
    if (std::fabs(a[(size_t)piv * k + col]) < 1e-300) return false;
    if (piv != col) {
      for (int j = col; j < k; ++j)
        std::swap(a[(size_t)piv * k + j], a[(size_t)col * k + j]);
      std::swap(b[piv], b[col]);
    }
    for (int row = col + 1; row < k; ++row) {
      double f = a[(size_t)row * k + col] / a[(size_t)col * k + col];
      if (f == 0) continue;
      for (int j = col; j < k; ++j) a[(size_t)row * k + j] -= f * a[(size_t)col * k + j];
      b[row] -= f * b[col];
    }
  }
  for (int row = k - 1; row >= 0; --row) {
    double sum = b[row];
    for (int j = row + 1; j < k; ++j) sum -= a[(size_t)row * k + j] * b[j];
    b[row] = sum / a[(size_t)row * k + row];
  }
  return true;
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. The row-major input is consumed; eigenvectors (optional) come
/// out as columns of vecs in the same order as vals.
void sym_eig(int d, std::vector<double> a, std::vector<double>& vals,
             std::vector<double>* vecs) {
  auto at = [&](int i, int j) -> double& { return a[(size_t)i * d + j]; };
  if (vecs) {
    vecs->assign((size_t)d * d, 0.0);
    for (int i = 0; i < d; ++i) (*vecs)[(size_t)i * d + i] = 1.0;
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0, scale = 0;
    for (int i = 0; i < d; ++i) {
      scale += std::fabs(at(i, i));
      for (int j = i + 1; j < d; ++j) off += at(i, j) * at(i, j);
    }
    if (off <= 1e-30 * (1 + scale * scale)) break;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) {
        double apq = at(p, q);
        if (std::fabs(apq) <= 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1));
        double c = 1 / std::sqrt(t * t + 1);
        double sn = t * c;
        for (int kk = 0; kk < d; ++kk) {
          double akp = at(kk, p), akq = at(kk, q);
          at(kk, p) = c * akp - sn * akq;
          at(kk, q) = sn * akp + c * akq;
        }
        for (int kk = 0; kk < d; ++kk) {
          double apk = at(p, kk), aqk = at(q, kk);
          at(p, kk) = c * apk - sn * aqk;
          at(q, kk) = sn * apk + c * aqk;
        }
        if (vecs)
          for (int kk = 0; kk < d; ++kk) {
            double vkp = (*vecs)[(size_t)kk * d + p];
            double vkq = (*vecs)[(size_t)kk * d + q];
            (*vecs)[(size_t)kk * d + p] = c * vkp - sn * vkq;
            (*vecs)[(size_t)kk * d + q] = sn * vkp + c * vkq;
          }
      }
  }
  vals.resize(d);
  for (int i = 0; i < d; ++i) vals[i] = at(i, i);
}

// ============================================================
// Sampling and flattening
// ============================================================

double gaussian(Rng& rng) {
  double u1 = 1 - rng.uniform();
  double u2 = rng.uniform();
  return std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

/// Uniform point of the closed ball of radius r in pair space.
MatrixPair pair_in_ball(Rng& rng, int m, int n, double r) {
  const int d = 2 * m * n;
  MatrixPair p = MatrixPair::zero(m, n);
  double n2 = 0;
  for (int i = 0; i < d; ++i) {
    p.flat(i) = gaussian(rng);
    n2 += p.flat(i) * p.flat(i);
  }
  if (n2 <= 0) return p;
  double rad = r * std::pow(rng.uniform(), 1.0 / d);
  return (rad / std::sqrt(n2)) * p;
}

MatrixPair unflatten_pair(int m, int n, const std::vector<double>& x, int off) {
  MatrixPair p = MatrixPair::zero(m, n);
  for (int i = 0; i < 2 * m * n; ++i) p.flat(i) = x[(size_t)(off + i)];
  return p;
}

void clamp_segment_ball(std::vector<double>& x, int off, int cnt, double rmax) {
  double n2 = 0;
  for (int i = 0; i < cnt; ++i) n2 += x[(size_t)(off + i)] * x[(size_t)(off + i)];
  if (n2 > rmax * rmax && n2 > 0) {
    double f = rmax / std::sqrt(n2);
    for (int i = 0; i < cnt; ++i) x[(size_t)(off + i)] *= f;
  }
}

// ============================================================
// Damped least squares
// ============================================================

using ResidualFn = std::function<std::vector<double>(const std::vector<double>&)>;
using ClampFn = std::function<void(std::vector<double>&)>;

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Levenberg-style damped least squares with finite-difference Jacobians and
/// projection onto the feasible set after every trial step. Returns the
/// final residual 2-norm; x holds the best point found.
double lm_minimize(const ResidualFn& f, const ClampFn& clamp,
                   std::vector<double>& x, int max_iter) {
  const int k = (int)x.size();
  clamp(x);
  std::vector<double> r = f(x);
  const int l = (int)r.size();
  double rn = norm2(r);
  double mu = 1e-3;
  for (int iter = 0; iter < max_iter && rn > 1e-14; ++iter) {
    std::vector<double> jac((size_t)l * k);
    for (int j = 0; j < k; ++j) {
      double h = 1e-7 * (1 + std::fabs(x[j]));
      std::vector<double> xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      std::vector<double> rp = f(xp), rm = f(xm);
      for (int i = 0; i < l; ++i)
        jac[(size_t)i * k + j] = (rp[i] - rm[i]) / (2 * h);
    }
    std::vector<double> jtj((size_t)k * k, 0.0), jtr((size_t)k, 0.0);
    for (int i = 0; i < l; ++i)
      for (int a = 0; a < k; ++a) {
        jtr[a] += jac[(size_t)i * k + a] * r[i];
        for (int b = a; b < k; ++b)
          jtj[(size_t)a * k + b] += jac[(size_t)i * k + a] * jac[(size_t)i * k + b];
      }
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < a; ++b) jtj[(size_t)a * k + b] = jtj[(size_t)b * k + a];
    bool accepted = false;
    for (int tries = 0; tries < 8 && !accepted; ++tries) {
      std::vector<double> lhs = jtj;
      for (int a = 0; a < k; ++a)
        lhs[(size_t)a * k + a] += mu * (jtj[(size_t)a * k + a] + 1e-12);
      std::vector<double> dx = jtr;
      if (!gauss_solve(k, lhs, dx)) {
        mu = std::min(mu * 4, 1e12);
        continue;
      }
      std::vector<double> xt = x;
      for (int a = 0; a < k; ++a) xt[a] -= dx[a];
      clamp(xt);
      std::vector<double> rt = f(xt);
      double rtn = norm2(rt);
      if (rtn < rn) {
        x = xt;
        r = rt;
        rn = rtn;
        mu = std::max(mu / 3, 1e-12);
        accepted = true;
      } else {
        mu = std::min(mu * 4, 1e12);
      }
    }
    if (!accepted) break;
  }
  return rn;
}

// ============================================================
// Scenario plumbing
// ============================================================

void check_branch(const Scenario& s, int i, const char* who) {
  if (i < 1 || i > s.N)
    throw precondition_error(std::string(who) + ": branch index " +
                             std::to_string(i) + " outside 1.." +
                             std::to_string(s.N));
}

void check_pair_dims(const Scenario& s, const MatrixPair& x, const char* who) {
  if (x.m() != s.m || x.n() != s.n)
    throw precondition_error(std::string(who) + ": pair dimensions " +
                             std::to_string(x.m()) + "x" + std::to_string(x.n()) +
                             " do not match the scenario");
}

std::vector<WaveVector> gammas_at(const Scenario& s, const MatrixPair& rho,
                                  const char* who) {
  auto gs = s.gamma_map(rho);
  if ((int)gs.size() != s.N)
    throw scenario_error(std::string(who) + ": gamma map returned " +
                         std::to_string(gs.size()) + " waves, expected " +
                         std::to_string(s.N));
  for (const auto& g : gs)
    if (g.p.n != s.m || g.a.n != s.n || g.B.m != s.m || g.B.n != s.n)
      throw scenario_error(std::string(who) + ": gamma wave dimensions do not match the scenario");
  return gs;
}

std::vector<double> kappas_at(const Scenario& s, const MatrixPair& rho,
                              const char* who) {
  auto ks = s.kappa_map(rho);
  if ((int)ks.size() != s.N)
    throw scenario_error(std::string(who) + ": kappa map returned " +
                         std::to_string(ks.size()) + " values, expected " +
                         std::to_string(s.N));
  return ks;
}

/// Minimum distance between two level-set images over the closed parameter
/// ball, polished by damped least squares from the best sampled pair. A raw
/// sampled minimum bottoms out at the sample spacing, so it cannot tell a
/// thin gap from an overlap; the polish drives genuine overlaps to zero.
/// With `projected` set, only the first slots are compared.
double min_pair_gap(const Scenario& s, int i, int j, double li, double lj,
                    bool projected, const std::vector<MatrixPair>& rhos,
                    int cap) {
  const int K = std::min(cap, (int)rhos.size());
  std::vector<MatrixPair> ai, bj;
  ai.reserve((size_t)K);
  bj.reserve((size_t)K);
  for (int p = 0; p < K; ++p) {
    ai.push_back(zeta(s, i, li, rhos[(size_t)p]));
    bj.push_back(zeta(s, j, lj, rhos[(size_t)p]));
  }
  auto gap = [&](const MatrixPair& a, const MatrixPair& b) {
    return projected ? frob(a.first - b.first) : dist(a, b);
  };
  int ba = 0, bb = 0;
  double best = kInf;
  for (int p = 0; p < K; ++p)
    for (int q = 0; q < K; ++q) {
      double v = gap(ai[(size_t)p], bj[(size_t)q]);
      if (v < best) {
        best = v;
        ba = p;
        bb = q;
      }
    }
  const int d = 2 * s.m * s.n;
  auto clamp = [&](std::vector<double>& x) {
    clamp_segment_ball(x, 0, d, s.r0);
    clamp_segment_ball(x, d, d, s.r0);
  };
  auto resid = [&](const std::vector<double>& x) {
    std::vector<double> xc = x;
    clamp(xc);
    MatrixPair a = zeta(s, i, li, unflatten_pair(s.m, s.n, xc, 0));
    MatrixPair b = zeta(s, j, lj, unflatten_pair(s.m, s.n, xc, d));
    const int l = projected ? s.m * s.n : 2 * s.m * s.n;
    std::vector<double> rv((size_t)l);
    if (projected) {
      Mat diff = a.first - b.first;
      for (int e = 0; e < l; ++e) rv[(size_t)e] = diff.v[(size_t)e];
    } else {
      MatrixPair diff = a - b;
      for (int e = 0; e < l; ++e) rv[(size_t)e] = diff.flat(e);
    }
    return rv;
  };
  std::vector<double> x((size_t)(2 * d));
  for (int e = 0; e < d; ++e) {
    x[(size_t)e] = rhos[(size_t)ba].flat(e);
    x[(size_t)(d + e)] = rhos[(size_t)bb].flat(e);
  }
  double rn = lm_minimize(resid, clamp, x, 60);
  return std::min(best, rn);
}

}  // namespace

// ============================================================
// Staircase maps
// ============================================================

MatrixPair anchor(const Scenario& s, int i, const MatrixPair& rho) {
  check_branch(s, i, "anchor");
  check_pair_dims(s, rho, "anchor");
  auto gs = gammas_at(s, rho, "anchor");
  MatrixPair p = rho;
  for (int j = 1; j < i; ++j) p = p + gs[(size_t)j - 1].pair();
  return p;
}

MatrixPair corner(const Scenario& s, int i, const MatrixPair& rho) {
  check_branch(s, i, "corner");
  check_pair_dims(s, rho, "corner");
  auto gs = gammas_at(s, rho, "corner");
  auto ks = kappas_at(s, rho, "corner");
  MatrixPair p = rho;
  for (int j = 1; j < i; ++j) p = p + gs[(size_t)j - 1].pair();
  return p + ks[(size_t)i - 1] * gs[(size_t)i - 1].pair();
}

MatrixPair zeta(const Scenario& s, int i, double lambda, const MatrixPair& rho) {
  check_branch(s, i, "zeta");
  check_pair_dims(s, rho, "zeta");
  if (norm(rho) > s.r0 * (1 + 1e-12))
    throw precondition_error("zeta: |rho| = " + str(norm(rho)) +
                             " exceeds the parameter radius " + str(s.r0));
  if (lambda < -1e-12 || lambda > 1 + 1e-12)
    throw precondition_error("zeta: lambda = " + str(lambda) + " outside [0,1]");
  return lambda * corner(s, i, rho) + (1 - lambda) * anchor(s, i, rho);
}

std::vector<double> pi_decomposition(const Scenario& s, int i, double lambda,
                                     const MatrixPair& rho) {
  check_branch(s, i, "pi_decomposition");
  check_pair_dims(s, rho, "pi_decomposition");
  if (lambda <= s.delta2)
    throw precondition_error("pi_decomposition: lambda = " + str(lambda) +
                             " must exceed delta2 = " + str(s.delta2));
  if (lambda > 1 + 1e-12)
    throw precondition_error("pi_decomposition: lambda = " + str(lambda) +
                             " outside (delta2, 1]");
  if (norm(rho) >= s.r0)
    throw precondition_error("pi_decomposition: |rho| = " + str(norm(rho)) +
                             " must be strictly below " + str(s.r0));
  auto ks = kappas_at(s, rho, "pi_decomposition");
  std::vector<double> t((size_t)s.N);
  for (int k = 0; k < s.N; ++k) t[(size_t)k] = 1.0 / (ks[(size_t)k] * lambda);
  CoeffMatrix nu = cyclic_coeffs(t);
  std::vector<double> row((size_t)s.N);
  for (int j = 1; j <= s.N; ++j) row[(size_t)j - 1] = nu.at(i, j);
  return row;
}

// ============================================================
// Wave cone membership
// ============================================================

double wave_cone_residual(const Mat& U, const Mat& V) {
  const int n = U.n;
  std::vector<double> gram((size_t)n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double sum = 0;
      for (int k = 0; k < U.m; ++k) sum += U.at(k, i) * U.at(k, j);
      gram[(size_t)i * n + j] = sum;
    }
  std::vector<double> vals, vecs;
  sym_eig(n, gram, vals, &vecs);
  int top = 0;
  for (int i = 1; i < n; ++i)
    if (vals[i] > vals[top]) top = i;
  if (vals[top] <= 1e-30) {
    // Vanishing first slot: membership only needs a kernel direction of V,
    // measured by its smallest singular value.
    std::vector<double> vg((size_t)n * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double sum = 0;
        for (int k = 0; k < V.m; ++k) sum += V.at(k, i) * V.at(k, j);
        vg[(size_t)i * n + j] = sum;
      }
    std::vector<double> vvals;
    sym_eig(n, vg, vvals, nullptr);
    double lo = vvals[0];
    for (double v : vvals) lo = std::min(lo, v);
    return std::sqrt(std::max(0.0, lo));
  }
  // Eigenvalues below the Gram matrix's own rounding floor are noise, not
  // evidence of a second direction; counting them would put a sqrt(eps)
  // floor under every exact rank-one input.
  double off = 0;
  for (int i = 0; i < n; ++i)
    if (i != top && vals[i] > 1e-12 * vals[top]) off += std::max(0.0, vals[i]);
  double kernel = 0;
  for (int k = 0; k < V.m; ++k) {
    double sum = 0;
    for (int j = 0; j < n; ++j) sum += V.at(k, j) * vecs[(size_t)j * n + top];
    kernel += sum * sum;
  }
  return std::sqrt(off) + std::sqrt(kernel);
}

// ============================================================
// Branch classification
// ============================================================

ClassifyResult classify_S(const Scenario& s, double r, double lambda,
                          const MatrixPair& Y) {
  check_pair_dims(s, Y, "classify_S");
  if (!(r > 0) || r > s.r0 * (1 + 1e-12))
    throw precondition_error("classify_S: radius " + str(r) + " outside (0, " +
                             str(s.r0) + "]");
  bool level_ok = lambda == 0 ||
                  (lambda >= s.delta2 - 1e-12 && lambda <= 1 + 1e-12);
  if (!level_ok)
    throw precondition_error("classify_S: level " + str(lambda) +
                             " is neither 0 nor in [delta2, 1]");

  const int d = 2 * s.m * s.n;
  const double tol = 1e-10 * (1 + norm(Y));
  const double rin = r * (1 - 1e-9);
  ClassifyResult out;
  out.residual = kInf;

  auto clamp = [&](std::vector<double>& x) { clamp_segment_ball(x, 0, d, rin); };

  for (int i = 1; i <= s.N; ++i) {
    auto resid = [&](const std::vector<double>& x) {
      std::vector<double> xc = x;
      clamp(xc);
      MatrixPair rho = unflatten_pair(s.m, s.n, xc, 0);
      MatrixPair diff = zeta(s, i, lambda, rho) - Y;
      std::vector<double> rv((size_t)d);
      for (int e = 0; e < d; ++e) rv[(size_t)e] = diff.flat(e);
      return rv;
    };

    // Starts: the center plus the best few of a coarse parameter cloud.
    std::vector<std::vector<double>> starts;
    starts.emplace_back((size_t)d, 0.0);
    {
      Rng rng(mix_seed(0xc1a55ull, (uint64_t)i, 0));
      std::vector<std::pair<double, MatrixPair>> cloud;
      for (int j = 0; j < 64; ++j) {
        MatrixPair rho = pair_in_ball(rng, s.m, s.n, rin);
        cloud.emplace_back(dist(zeta(s, i, lambda, rho), Y), rho);
      }
      std::sort(cloud.begin(), cloud.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (int j = 0; j < 3 && j < (int)cloud.size(); ++j) {
        std::vector<double> x((size_t)d);
        for (int e = 0; e < d; ++e) x[(size_t)e] = cloud[(size_t)j].second.flat(e);
        starts.push_back(std::move(x));
      }
    }
    for (auto& x : starts) {
      double rn = lm_minimize(resid, clamp, x, 80);
      if (rn < out.residual) out.residual = rn;
      if (rn < tol) {
        out.status = Membership::member;
        out.i = i;
        out.rho = unflatten_pair(s.m, s.n, x, 0);
        out.residual = rn;
        return out;
      }
    }
  }

  // Non-membership certificate: Y must clear every sampled image by more
  // than a Lipschitz slack times the cloud's covering radius.
  bool certified = true;
  for (int i = 1; i <= s.N && certified; ++i) {
    Rng rng(mix_seed(0xc1a56ull, (uint64_t)i, 1));
    const int K = 512;
    std::vector<MatrixPair> rhos;
    std::vector<MatrixPair> vals;
    double dmin = kInf;
    for (int j = 0; j < K; ++j) {
      MatrixPair rho = pair_in_ball(rng, s.m, s.n, r);
      MatrixPair v = zeta(s, i, lambda, rho);
      dmin = std::min(dmin, dist(v, Y));
      rhos.push_back(rho);
      vals.push_back(v);
    }
    double lip = 0;
    for (int j = 0; j < 128; ++j) {
      int a = (int)rng.below(K), b = (int)rng.below(K);
      double dr = dist(rhos[(size_t)a], rhos[(size_t)b]);
      if (dr > 1e-12)
        lip = std::max(lip, dist(vals[(size_t)a], vals[(size_t)b]) / dr);
    }
    double covering = 4 * r * std::pow((double)K, -1.0 / d);
    if (dmin <= 2 * lip * covering) certified = false;
  }
  out.status = certified ? Membership::not_member : Membership::unresolved;
  return out;
}

// ============================================================
// Segment-union membership
// ============================================================

DecomposeResult decompose_Sigma(const Scenario& s, double r, double lambda,
                                const MatrixPair& Y) {
  check_pair_dims(s, Y, "decompose_Sigma");
  if (!(r > 0) || r > s.r0 * (1 + 1e-12))
    throw precondition_error("decompose_Sigma: radius " + str(r) +
                             " outside (0, " + str(s.r0) + "]");
  if (lambda < s.delta2 - 1e-12 || lambda >= 1)
    throw precondition_error("decompose_Sigma: level " + str(lambda) +
                             " outside [delta2, 1)");
  if (s.decomposer) return s.decomposer(s, r, lambda, Y);

  const int mn2 = 2 * s.m * s.n;
  const int k = 2 + 2 * mn2;  // lambda', q, rho, rho'
  const double rin = r * (1 - 1e-9);
  DecomposeResult out;
  out.best_residual = kInf;

  auto clamp = [&](std::vector<double>& x) {
    x[0] = std::clamp(x[0], s.delta2, lambda);
    x[1] = std::clamp(x[1], 0.0, 1.0);
    clamp_segment_ball(x, 2, mn2, rin);
    clamp_segment_ball(x, 2 + mn2, mn2, rin);
  };

  for (int i = 1; i <= s.N; ++i) {
    auto resid = [&](const std::vector<double>& x) {
      std::vector<double> xc = x;
      clamp(xc);
      double lp = xc[0], q = xc[1];
      MatrixPair rho = unflatten_pair(s.m, s.n, xc, 2);
      MatrixPair rhop = unflatten_pair(s.m, s.n, xc, 2 + mn2);
      MatrixPair zt = zeta(s, i, lp, rho);
      MatrixPair pp = anchor(s, i, rhop);
      MatrixPair rec = q * zt + (1 - q) * pp - Y;
      std::vector<double> rv((size_t)mn2 + 1);
      for (int e = 0; e < mn2; ++e) rv[(size_t)e] = rec.flat(e);
      rv[(size_t)mn2] = wave_cone_residual(zt.first - pp.first, zt.second - pp.second);
      return rv;
    };

    std::vector<std::vector<double>> starts;
    {
      // Endpoint guesses first, then seeded starts sweeping lambda' upward.
      std::vector<double> x0((size_t)k, 0.0);
      x0[0] = lambda;
      x0[1] = 1.0;
      starts.push_back(x0);
      x0[1] = 0.0;
      starts.push_back(x0);
      for (int si = 0; si < 32; ++si) {
        Rng rng(mix_seed(0xdec04ull, (uint64_t)i, (uint64_t)si));
        std::vector<double> x((size_t)k, 0.0);
        x[0] = s.delta2 + (lambda - s.delta2) * (si + 0.5) / 32.0;
        x[1] = rng.uniform();
        MatrixPair rho = pair_in_ball(rng, s.m, s.n, 0.9 * rin);
        MatrixPair rhop = (si % 2 == 0) ? rho : pair_in_ball(rng, s.m, s.n, 0.9 * rin);
        for (int e = 0; e < mn2; ++e) {
          x[(size_t)(2 + e)] = rho.flat(e);
          x[(size_t)(2 + mn2 + e)] = rhop.flat(e);
        }
        starts.push_back(std::move(x));
      }
    }
    for (auto& x : starts) {
      double rn = lm_minimize(resid, clamp, x, 60);
      if (rn < out.best_residual) out.best_residual = rn;
      if (rn < 1e-9) {
        clamp(x);
        out.found = true;
        out.witness.i = i;
        out.witness.lambda_prime = x[0];
        out.witness.q = x[1];
        out.witness.rho = unflatten_pair(s.m, s.n, x, 2);
        out.witness.rho_prime = unflatten_pair(s.m, s.n, x, 2 + mn2);
        out.witness.residual = rn;
        out.best_residual = rn;
        return out;
      }
    }
  }
  return out;
}

// ============================================================
// Gap estimates
// ============================================================

GapEstimates set_gaps(const Scenario& s, double r, double s_outer, double mu,
                      int samples, uint64_t seed) {
  if (!(r > 0) || !(r < s_outer) || s_outer > s.r0 * (1 + 1e-12))
    throw precondition_error("set_gaps: need 0 < r < s <= r0, got r = " +
                             str(r) + ", s = " + str(s_outer));
  if (mu < s.delta2 - 1e-12 || mu >= 1)
    throw precondition_error("set_gaps: level " + str(mu) + " outside [delta2, 1)");
  if (samples < 16)
    throw precondition_error("set_gaps: need at least 16 samples");

  // Pairwise distance of the projected corner images over the full ball.
  double raw0 = kInf;
  {
    const int K = std::min(512, std::max(64, samples / 4));
    Rng rng(mix_seed(seed, 0xd0ull, 0));
    std::vector<MatrixPair> rhos;
    rhos.push_back(MatrixPair::zero(s.m, s.n));
    for (int j = 1; j < K; ++j)
      rhos.push_back(pair_in_ball(rng, s.m, s.n, s.r0));
    for (int i = 1; i <= s.N; ++i)
      for (int j = i + 1; j <= s.N; ++j)
        raw0 = std::min(raw0, min_pair_gap(s, i, j, 1.0, 1.0, true, rhos, 128));
    if (!(raw0 > 1e-6))
      throw scenario_error("set_gaps: projected corner images touch (sampled gap " +
                           str(raw0) + ")");
  }

  // Exit-distance probes from the inner membership sets to the boundary of
  // the outer ones.
  const int mn2 = 2 * s.m * s.n;
  auto sigma_member = [&](const MatrixPair& pt, std::vector<double>& warm,
                          int branch) -> bool {
    if (s.decomposer) return decompose_Sigma(s, s_outer, mu, pt).found;
    auto resid = [&](const std::vector<double>& x) {
      std::vector<double> xc = x;
      xc[0] = std::clamp(xc[0], s.delta2, mu);
      xc[1] = std::clamp(xc[1], 0.0, 1.0);
      clamp_segment_ball(xc, 2, mn2, s_outer * (1 - 1e-9));
      clamp_segment_ball(xc, 2 + mn2, mn2, s_outer * (1 - 1e-9));
      MatrixPair rho = unflatten_pair(s.m, s.n, xc, 2);
      MatrixPair rhop = unflatten_pair(s.m, s.n, xc, 2 + mn2);
      MatrixPair zt = zeta(s, branch, xc[0], rho);
      MatrixPair pp = anchor(s, branch, rhop);
      MatrixPair rec = xc[1] * zt + (1 - xc[1]) * pp - pt;
      std::vector<double> rv((size_t)mn2 + 1);
      for (int e = 0; e < mn2; ++e) rv[(size_t)e] = rec.flat(e);
      rv[(size_t)mn2] =
          wave_cone_residual(zt.first - pp.first, zt.second - pp.second);
      return rv;
    };
    auto clamp = [&](std::vector<double>& x) {
      x[0] = std::clamp(x[0], s.delta2, mu);
      x[1] = std::clamp(x[1], 0.0, 1.0);
      clamp_segment_ball(x, 2, mn2, s_outer * (1 - 1e-9));
      clamp_segment_ball(x, 2 + mn2, mn2, s_outer * (1 - 1e-9));
    };
    return lm_minimize(resid, clamp, warm, 40) < 1e-9;
  };
  auto branch_member = [&](int branch, const MatrixPair& pt,
                           std::vector<double>& warm) -> bool {
    auto resid = [&](const std::vector<double>& x) {
      std::vector<double> xc = x;
      clamp_segment_ball(xc, 0, mn2, s_outer * (1 - 1e-9));
      MatrixPair diff = zeta(s, branch, mu, unflatten_pair(s.m, s.n, xc, 0)) - pt;
      std::vector<double> rv((size_t)mn2);
      for (int e = 0; e < mn2; ++e) rv[(size_t)e] = diff.flat(e);
      return rv;
    };
    auto clamp = [&](std::vector<double>& x) {
      clamp_segment_ball(x, 0, mn2, s_outer * (1 - 1e-9));
    };
    return lm_minimize(resid, clamp, warm, 40) < 1e-10 * (1 + norm(pt));
  };

  auto exit_distance = [&](const MatrixPair& y, const MatrixPair& e,
                           const std::function<bool(const MatrixPair&)>& inside,
                           double cap) -> double {
    if (!inside(y)) return -1;
    double lo = 0, hi = std::max(1e-6, 1e-3 * cap);
    while (inside(y + hi * e)) {
      lo = hi;
      hi *= 2;
      if (hi > cap) return cap;
    }
    for (int it = 0; it < 50; ++it) {
      double mid = 0.5 * (lo + hi);
      if (inside(y + mid * e))
        lo = mid;
      else
        hi = mid;
    }
    return lo;
  };

  auto directions = [&](Rng& rng) {
    std::vector<MatrixPair> dirs;
    for (int a = 0; a < std::min(mn2, 6); ++a) {
      MatrixPair e = MatrixPair::zero(s.m, s.n);
      e.flat(a) = 1;
      dirs.push_back(e);
      e.flat(a) = -1;
      dirs.push_back(e);
    }
    for (int extra = 0; extra < 2; ++extra) {
      MatrixPair e = pair_in_ball(rng, s.m, s.n, 1.0);
      double nn = norm(e);
      if (nn > 1e-9) dirs.push_back((1 / nn) * e);
    }
    return dirs;
  };

  double raw_prime = kInf;
  int seated = 0;
  const int probes = std::max(8, samples / 32);
  for (int idx = 0; idx < probes; ++idx) {
    Rng rng(mix_seed(seed, 0xd1ull, (uint64_t)idx));
    int i = 1 + idx % s.N;
    double lp = rng.uniform(s.delta2, mu);
    double q = rng.uniform();
    MatrixPair rho = pair_in_ball(rng, s.m, s.n, 0.98 * r);
    MatrixPair y = q * zeta(s, i, lp, rho) + (1 - q) * anchor(s, i, rho);
    double cap = 10 * (norm(y) + s_outer + 1);

    std::vector<double> warm((size_t)(2 + 2 * mn2), 0.0);
    warm[0] = lp;
    warm[1] = q;
    for (int e = 0; e < mn2; ++e) {
      warm[(size_t)(2 + e)] = rho.flat(e);
      warm[(size_t)(2 + mn2 + e)] = rho.flat(e);
    }
    auto inside = [&](const MatrixPair& pt) { return sigma_member(pt, warm, i); };
    bool ok = false;
    for (const auto& e : directions(rng)) {
      double t = exit_distance(y, e, inside, cap);
      if (t < 0) break;
      ok = true;
      raw_prime = std::min(raw_prime, t);
    }
    if (ok) ++seated;

    // The same probe family with q = 1 exercises the single-branch sets.
    MatrixPair yb = zeta(s, i, mu, rho);
    std::vector<double> warmb((size_t)mn2, 0.0);
    for (int e = 0; e < mn2; ++e) warmb[(size_t)e] = rho.flat(e);
    auto insideb = [&](const MatrixPair& pt) { return branch_member(i, pt, warmb); };
    for (const auto& e : directions(rng)) {
      double t = exit_distance(yb, e, insideb, cap);
      if (t < 0) break;
      raw_prime = std::min(raw_prime, t);
    }
  }
  if (seated == 0)
    throw scenario_error("set_gaps: no probe point verified as a member of the outer set");
  if (!(raw_prime > 1e-12))
    throw scenario_error("set_gaps: sampled boundary gap is not positive (" +
                         str(raw_prime) + ")");

  GapEstimates g;
  g.d_prime_raw = raw_prime;
  g.d0_raw = raw0;
  g.d_prime = 0.5 * raw_prime;
  g.d0 = 0.5 * raw0;
  return g;
}

// ============================================================
// Validation
// ============================================================

std::string ValidationReport::summary() const {
  std::string out;
  for (const auto& c : checks) {
    out += c.pass ? "PASS " : "FAIL ";
    out += c.name + " (worst = " + str(c.worst) + ")";
    if (!c.detail.empty()) out += ": " + c.detail;
    out += "\n";
  }
  return out;
}

ValidationReport validate_scenario(const Scenario& s, int samples,
                                   uint64_t seed) {
  if (samples < 1000)
    throw precondition_error("validate_scenario: need at least 1000 samples");
  if (s.m < 1 || s.m > max_dim || s.n < 1 || s.n > max_dim || s.N < 2)
    throw scenario_error("validate_scenario: dimensions out of range");
  if (!(s.r0 > 0) || !(s.delta1 > 0) || !(s.delta1 < s.delta2) || !(s.delta2 < 1))
    throw scenario_error("validate_scenario: need r0 > 0 and 0 < delta1 < delta2 < 1");

  ValidationReport rep;
  std::vector<MatrixPair> rhos;
  {
    Rng rng(mix_seed(seed, 0xa0ull, 0));
    rhos.push_back(MatrixPair::zero(s.m, s.n));
    for (int j = 1; j < samples; ++j)
      rhos.push_back(pair_in_ball(rng, s.m, s.n, s.r0));
  }

  auto add = [&](const std::string& name, bool pass, double worst,
                 std::string detail) {
    rep.checks.push_back({name, pass, worst, std::move(detail)});
  };

  // Zero sum and cone membership of the waves, kappa range.
  {
    double worst_sum = 0, worst_cone = 0, worst_kappa = 0;
    std::string where_sum, where_kappa;
    const double klo = 1 / s.delta2, khi = 1 / s.delta1;
    for (const auto& rho : rhos) {
      auto gs = gammas_at(s, rho, "validate_scenario");
      auto ks = kappas_at(s, rho, "validate_scenario");
      MatrixPair sum = MatrixPair::zero(s.m, s.n);
      double scale = 0;
      for (const auto& g : gs) {
        sum = sum + g.pair();
        scale = std::max(scale, norm(g.pair()));
        double res = wave_residual(g) / (frob(g.B) * norm(g.a) + 1);
        worst_cone = std::max(worst_cone, res);
      }
      double v = norm(sum) / (1 + scale);
      if (v > worst_sum) {
        worst_sum = v;
        where_sum = "at rho = " + str(rho);
      }
      for (int i = 0; i < s.N; ++i) {
        double kv = ks[(size_t)i];
        double out = std::max({0.0, klo - kv, kv - khi});
        if (out > worst_kappa) {
          worst_kappa = out;
          where_kappa = "kappa_" + std::to_string(i + 1) + " = " + str(kv) +
                        " at rho = " + str(rho);
        }
      }
    }
    add("gamma zero sum", worst_sum <= 1e-9, worst_sum,
        worst_sum <= 1e-9 ? "" : where_sum);
    add("gamma wave cone", worst_cone <= 1e-9, worst_cone, "");
    add("kappa range", worst_kappa <= 1e-12, worst_kappa,
        worst_kappa <= 1e-12 ? "" : where_kappa);
  }

  // Graph fidelity of the corners.
  {
    double worst = 0;
    std::string where;
    for (const auto& rho : rhos)
      for (int i = 1; i <= s.N; ++i) {
        MatrixPair xi = corner(s, i, rho);
        double v = frob(s.sigma(xi.first) - xi.second);
        if (v > worst) {
          worst = v;
          where = "branch " + std::to_string(i) + " at rho = " + str(rho);
        }
      }
    add("graph fidelity", worst <= s.graph_tol, worst,
        worst <= s.graph_tol ? "" : where);
  }

  // Pairwise separation of the projected corner and anchor images.
  {
    double worst_xi = kInf, worst_pi = kInf;
    std::string where_xi, where_pi;
    for (int i = 1; i <= s.N; ++i)
      for (int j = i + 1; j <= s.N; ++j) {
        double dxi = min_pair_gap(s, i, j, 1.0, 1.0, true, rhos, 128);
        double dpi = min_pair_gap(s, i, j, 0.0, 0.0, true, rhos, 128);
        if (dxi < worst_xi) {
          worst_xi = dxi;
          where_xi = "branches " + std::to_string(i) + "/" + std::to_string(j);
        }
        if (dpi < worst_pi) {
          worst_pi = dpi;
          where_pi = "branches " + std::to_string(i) + "/" + std::to_string(j);
        }
      }
    add("corner projection separation", worst_xi > 1e-9, worst_xi,
        worst_xi > 1e-9 ? "" : where_xi);
    add("anchor projection separation", worst_pi > 1e-9, worst_pi,
        worst_pi > 1e-9 ? "" : where_pi);
  }

  // Openness proxy: the parameter Jacobian of each level map stays full
  // rank at representative levels.
  {
    const int d = 2 * s.m * s.n;
    const double levels[3] = {0.0, s.delta2, (s.delta2 + 1) / 2};
    double worst = kInf;
    std::string where;
    const int K = std::min((int)rhos.size(), 16);
    for (double lam : levels)
      for (int i = 1; i <= s.N; ++i)
        for (int p = 0; p < K; ++p) {
          MatrixPair rho = rhos[(size_t)p];
          double nr = norm(rho);
          if (nr > 0.99 * s.r0) rho = (0.99 * s.r0 / nr) * rho;
          double h = 1e-4 * s.r0;
          std::vector<double> jac((size_t)d * d);
          for (int c = 0; c < d; ++c) {
            MatrixPair rp = rho, rm = rho;
            rp.flat(c) += h;
            rm.flat(c) -= h;
            MatrixPair diff = zeta(s, i, lam, rp) - zeta(s, i, lam, rm);
            for (int rrow = 0; rrow < d; ++rrow)
              jac[(size_t)rrow * d + c] = diff.flat(rrow) / (2 * h);
          }
          std::vector<double> jtj((size_t)d * d, 0.0);
          for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) {
              double sum = 0;
              for (int rrow = 0; rrow < d; ++rrow)
                sum += jac[(size_t)rrow * d + a] * jac[(size_t)rrow * d + b];
              jtj[(size_t)a * d + b] = sum;
            }
          std::vector<double> vals;
          sym_eig(d, jtj, vals, nullptr);
          double lo = kInf, hi = 0;
          for (double v : vals) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
          double ratio = std::sqrt(std::max(0.0, lo)) / (1 + std::sqrt(std::max(0.0, hi)));
          if (ratio < worst) {
            worst = ratio;
            where = "branch " + std::to_string(i) + " at level " + str(lam);
          }
        }
    add("level jacobian rank", worst >= 1e-7, worst, worst >= 1e-7 ? "" : where);
  }

  // Pairwise separation of the level sets across a level grid.
  {
    double worst = kInf;
    std::string where;
    std::vector<double> levels{0.0};
    for (int k = 0; k <= 24; ++k)
      levels.push_back(s.delta2 + k * (1 - s.delta2 - 1e-9) / 24);
    for (double lam : levels)
      for (int i = 1; i <= s.N; ++i)
        for (int j = i + 1; j <= s.N; ++j) {
          double v = min_pair_gap(s, i, j, lam, lam, false, rhos, 96);
          if (v < worst) {
            worst = v;
            where = "branches " + std::to_string(i) + "/" + std::to_string(j) +
                    " at level " + str(lam);
          }
        }
    add("level set separation", worst > 1e-9, worst, worst > 1e-9 ? "" : where);
  }

  rep.ok = true;
  for (const auto& c : rep.checks) rep.ok = rep.ok && c.pass;
  return rep;
}

// ============================================================
// Built-in two-branch data
// ============================================================

namespace {

/// Closed-form membership for the scalar two-branch data. The second slots
/// of both endpoints must equal the query's, which pins both parameters'
/// second components; the first slot then reduces to interval arithmetic,
/// scanned over an ascending level grid for a canonical witness.
DecomposeResult two_branch_decompose(const Scenario& s, double r, double lambda,
                                     const MatrixPair& Y) {
  DecomposeResult out;
  out.best_residual = kInf;
  const double y1 = Y.first.at(0, 0);
  const double y2 = Y.second.at(0, 0);
  const double rr = r * r - y2 * y2;

  auto make_pair = [](double a, double b) {
    MatrixPair p = MatrixPair::zero(1, 1);
    p.first.at(0, 0) = a;
    p.second.at(0, 0) = b;
    return p;
  };
  auto finish = [&](int i, double lp, double q, double rho1, double rhop1) {
    out.found = true;
    out.witness.i = i;
    out.witness.lambda_prime = lp;
    out.witness.q = q;
    out.witness.rho = make_pair(rho1, y2);
    out.witness.rho_prime = make_pair(rhop1, y2);
    MatrixPair rec = q * zeta(s, i, lp, out.witness.rho) +
                     (1 - q) * anchor(s, i, out.witness.rho_prime) - Y;
    out.witness.residual = norm(rec);
    out.best_residual = out.witness.residual;
    return out;
  };

  if (rr <= 0) {
    out.best_residual = std::fabs(y2) - r;
    return out;
  }
  const double R = std::sqrt(rr);
  const double Reff = R * (1 - 1e-12);

  for (int i = 1; i <= 2; ++i) {
    const double base = (i == 1) ? 0.0 : 1.0;  // anchor first slot at rho = 0
    for (int k = 0; k <= 100; ++k) {
      const double lp = (k == 100) ? lambda
                                   : s.delta2 + k * (lambda - s.delta2) / 100;
      // First slot of the moving endpoint at rho1 = 0.
      const double c = (i == 1) ? (2 * lp + lp * y2) : (1 - 3 * lp + lp * y2);
      const double alo = c - (1 - lp) * Reff, ahi = c + (1 - lp) * Reff;
      const double plo = base - Reff, phi = base + Reff;
      const double hlo = std::min(alo, plo), hhi = std::max(ahi, phi);
      if (!(y1 > hlo && y1 < hhi)) {
        double gap = std::max({0.0, hlo - y1, y1 - hhi});
        out.best_residual = std::min(out.best_residual, gap);
        continue;
      }
      if (y1 > alo && y1 < ahi) {
        double rho1 = (y1 - c) / (1 - lp);
        if (std::fabs(rho1) < Reff) return finish(i, lp, 1.0, rho1, rho1);
      }
      if (y1 > plo && y1 < phi)
        return finish(i, lp, 0.0, y1 - base, y1 - base);
      for (double ta : {0.0, 0.95, -0.95}) {
        double aa = c + (1 - lp) * ta * Reff;
        for (double tb : {0.0, 0.95, -0.95}) {
          double bb = base + tb * Reff;
          if (std::fabs(aa - bb) < 1e-12) continue;
          double q = (y1 - bb) / (aa - bb);
          if (q >= 0 && q <= 1)
            return finish(i, lp, q, ta * Reff, bb - base);
        }
      }
    }
  }
  return out;
}

}  // namespace

Scenario two_branch_scenario() {
  Scenario s;
  s.name = "two-branch";
  s.m = 1;
  s.n = 1;
  s.N = 2;
  s.r0 = 0.1;
  s.delta1 = 0.2;
  s.delta2 = 0.6;
  s.kappa_map = [](const MatrixPair& rho) {
    const double r1 = rho.first.at(0, 0), r2 = rho.second.at(0, 0);
    return std::vector<double>{2 + r2 - r1, 3 - r2 + r1};
  };
  s.gamma_map = [](const MatrixPair&) {
    WaveVector up;
    up.p = Vec{1.0};
    up.a = Vec{1.0};
    up.B = Mat(1, 1);
    WaveVector down = up;
    down.p = Vec{-1.0};
    return std::vector<WaveVector>{up, down};
  };
  s.sigma = [](const Mat& X) {
    const double t = X.at(0, 0);
    Mat out(1, 1);
    if (t <= -1)
      out.at(0, 0) = t + 2;
    else if (t <= 1)
      out.at(0, 0) = -t;
    else
      out.at(0, 0) = t - 2;
    return out;
  };
  s.decomposer = two_branch_decompose;
  return s;
}

// ============================================================
// Graph-first construction
// ============================================================

Scenario graph_first_scenario(const ScenarioMaps& maps, int samples,
                              uint64_t seed) {
  if (maps.m < 1 || maps.m > max_dim || maps.n < 1 || maps.n > max_dim ||
      maps.N < 2)
    throw scenario_error("graph_first_scenario: dimensions out of range");
  if (!(maps.r0 > 0) || !(maps.delta1 > 0) || !(maps.delta1 < maps.delta2) ||
      !(maps.delta2 < 1))
    throw scenario_error("graph_first_scenario: need r0 > 0 and 0 < delta1 < delta2 < 1");
  if (samples < 64)
    throw precondition_error("graph_first_scenario: need at least 64 samples");

  Scenario s;
  s.name = maps.name.empty() ? "graph-first" : maps.name;
  s.m = maps.m;
  s.n = maps.n;
  s.N = maps.N;
  s.r0 = maps.r0;
  s.delta1 = maps.delta1;
  s.delta2 = maps.delta2;
  s.kappa_map = maps.kappa_map;
  s.gamma_map = maps.gamma_map;

  struct Patch {
    std::vector<MatrixPair> rho;
    std::vector<Mat> x1, x2;
  };
  auto table = std::make_shared<std::vector<Patch>>((size_t)maps.N);
  double scale = 0;
  for (int i = 1; i <= maps.N; ++i) {
    Rng rng(mix_seed(seed, 0x9full, (uint64_t)i));
    Patch& p = (*table)[(size_t)i - 1];
    p.rho.push_back(MatrixPair::zero(maps.m, maps.n));
    for (int j = 1; j < samples; ++j)
      p.rho.push_back(pair_in_ball(rng, maps.m, maps.n, maps.r0));
    for (const auto& rho : p.rho) {
      MatrixPair xi = corner(s, i, rho);
      p.x1.push_back(xi.first);
      p.x2.push_back(xi.second);
      scale = std::max(scale, frob(xi.first));
    }
  }

  // The graph must be single-valued per patch and the patches must not
  // collapse or overlap; otherwise no flux map is defined by the data.
  // Both failure modes are hunted with the damped least-squares search,
  // since a sampled pair scan cannot resolve them below the sample spacing.
  const int d = 2 * maps.m * maps.n;
  for (int i = 0; i < maps.N; ++i) {
    const Patch& p = (*table)[(size_t)i];
    double spread = 0, diam2 = 0;
    const int K = std::min((int)p.rho.size(), 256);
    for (int a = 0; a < K; ++a) {
      spread = std::max(spread, frob(p.x1[(size_t)a] - p.x1[0]));
      for (int b = a + 1; b < K; ++b)
        diam2 = std::max(diam2, frob(p.x2[(size_t)a] - p.x2[(size_t)b]));
    }
    if (spread <= 1e-9 * (1 + scale))
      throw scenario_error("graph_first_scenario: patch " + std::to_string(i + 1) +
                           " is degenerate (projected spread " + str(spread) + ")");
    if (diam2 <= 1e-6 * (1 + scale)) continue;

    // Search for two parameters with equal projections but separated
    // values; finding one means the patch defines no function.
    auto clamp = [&](std::vector<double>& x) {
      clamp_segment_ball(x, 0, d, maps.r0);
      clamp_segment_ball(x, d, d, maps.r0);
    };
    auto images = [&](const std::vector<double>& x, Mat& d1, Mat& d2) {
      std::vector<double> xc = x;
      clamp(xc);
      MatrixPair a = corner(s, i + 1, unflatten_pair(maps.m, maps.n, xc, 0));
      MatrixPair b = corner(s, i + 1, unflatten_pair(maps.m, maps.n, xc, d));
      d1 = a.first - b.first;
      d2 = a.second - b.second;
    };
    auto resid = [&](const std::vector<double>& x) {
      Mat d1, d2;
      images(x, d1, d2);
      std::vector<double> rv((size_t)(d1.entries() + 1));
      for (int e = 0; e < d1.entries(); ++e) rv[(size_t)e] = d1.v[(size_t)e];
      rv[(size_t)d1.entries()] = std::max(0.0, 0.5 * diam2 - frob(d2));
      return rv;
    };
    std::vector<std::pair<double, std::pair<int, int>>> ranked;
    for (int a = 0; a < K; ++a)
      for (int b = a + 1; b < K; ++b)
        ranked.push_back({frob(p.x2[(size_t)a] - p.x2[(size_t)b]) -
                              10 * frob(p.x1[(size_t)a] - p.x1[(size_t)b]),
                          {a, b}});
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int t = 0; t < 4 && t < (int)ranked.size(); ++t) {
      std::vector<double> x((size_t)(2 * d));
      for (int e = 0; e < d; ++e) {
        x[(size_t)e] = p.rho[(size_t)ranked[(size_t)t].second.first].flat(e);
        x[(size_t)(d + e)] = p.rho[(size_t)ranked[(size_t)t].second.second].flat(e);
      }
      lm_minimize(resid, clamp, x, 60);
      Mat d1, d2;
      images(x, d1, d2);
      if (frob(d1) <= 1e-9 * (1 + scale) && frob(d2) >= 0.25 * diam2) {
        std::vector<double> xc = x;
        clamp(xc);
        Mat at = corner(s, i + 1, unflatten_pair(maps.m, maps.n, xc, 0)).first;
        throw scenario_error("graph_first_scenario: patch " + std::to_string(i + 1) +
                             " is multivalued near " + str(at) +
                             " (value spread " + str(frob(d2)) + ")");
      }
    }
  }
  for (int i = 1; i <= maps.N; ++i)
    for (int j = i + 1; j <= maps.N; ++j) {
      double gap = min_pair_gap(s, i, j, 1.0, 1.0, true, (*table)[0].rho, 128);
      if (gap <= 1e-9 * (1 + scale))
        throw scenario_error("graph_first_scenario: patches " + std::to_string(i) +
                             " and " + std::to_string(j) +
                             " overlap (projected gap " + str(gap) + ")");
    }

  // The flux map inverts the first slot on the nearest patch and reads the
  // second; off-patch queries get the value at the projection. Several
  // starts guard against a nearest sample whose null-space component drags
  // the projected search along the ball boundary.
  Scenario maps_only = s;
  const double r0 = maps.r0;
  s.sigma = [table, maps_only, d, r0](const Mat& X) -> Mat {
    int besti = 0;
    double bestd = kInf;
    for (size_t i = 0; i < table->size(); ++i)
      for (const auto& x1 : (*table)[i].x1) {
        double v = frob(x1 - X);
        if (v < bestd) {
          bestd = v;
          besti = (int)i;
        }
      }
    const Patch& p = (*table)[(size_t)besti];
    std::vector<std::pair<double, size_t>> near;
    for (size_t j = 0; j < p.x1.size(); ++j)
      near.push_back({frob(p.x1[j] - X), j});
    std::partial_sort(near.begin(), near.begin() + std::min<size_t>(3, near.size()),
                      near.end());

    auto clamp = [&](std::vector<double>& x) {
      clamp_segment_ball(x, 0, d, r0);
    };
    auto resid = [&](const std::vector<double>& x) {
      std::vector<double> xc = x;
      clamp(xc);
      MatrixPair rho = unflatten_pair(maps_only.m, maps_only.n, xc, 0);
      Mat diff = corner(maps_only, besti + 1, rho).first - X;
      std::vector<double> rv((size_t)diff.entries());
      for (int e = 0; e < diff.entries(); ++e) rv[(size_t)e] = diff.v[(size_t)e];
      return rv;
    };

    std::vector<std::vector<double>> starts;
    for (size_t t = 0; t < std::min<size_t>(3, near.size()); ++t) {
      std::vector<double> x((size_t)d);
      for (int e = 0; e < d; ++e) x[(size_t)e] = p.rho[near[t].second].flat(e);
      starts.push_back(std::move(x));
    }
    starts.emplace_back((size_t)d, 0.0);

    std::vector<double> best;
    double bestr = kInf;
    for (auto& x : starts) {
      double rn = lm_minimize(resid, clamp, x, 120);
      if (rn < bestr) {
        bestr = rn;
        best = x;
      }
      if (bestr < 1e-12) break;
    }
    clamp(best);
    return corner(maps_only, besti + 1,
                  unflatten_pair(maps_only.m, maps_only.n, best, 0))
        .second;
  };
  return s;
}

// ============================================================
// Compactness fit
// ============================================================

CompactnessFit compactness_fit(const Scenario& s,
                               const std::vector<MatrixPair>& points) {
  const double probe_r = s.r0 * (1 - 1e-3);
  const double probe_l = 1 - 1e-3;
  for (const auto& pt : points)
    if (!decompose_Sigma(s, probe_r, probe_l, pt).found)
      throw precondition_error(
          "compactness_fit: point " + str(pt) +
          " does not decompose at the near-maximal radius and level");
  const int rsteps = 50;
  for (int k = 1; k < rsteps; ++k) {
    const double r = s.r0 * k / rsteps;
    for (int j = 0;; ++j) {
      const double lam = s.delta2 + 0.01 * j;
      if (lam >= 1 - 1e-9) break;
      bool all = true;
      for (const auto& pt : points)
        if (!decompose_Sigma(s, r, lam, pt).found) {
          all = false;
          break;
        }
      if (all) return {r, lam};
    }
  }
  throw precondition_error("compactness_fit: no grid radius and level admit every point");
}

}  // namespace wildgrad
