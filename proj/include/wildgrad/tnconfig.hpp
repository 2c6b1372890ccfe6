#pragma once

#include <vector>

#include "wildgrad/core.hpp"

namespace wildgrad {

// Staircase-point algebra: N wave vectors summing to zero, anchors
// pi_1 = rho, pi_{i+1} = pi_i + gamma_i, corners xi_i = pi_i + kappa_i gamma_i,
// and the cyclic barycentric coefficients that express each anchor as a
// convex combination of the corners.

struct TNConfig {
  MatrixPair rho;
  std::vector<WaveVector> gammas;
  std::vector<double> kappas;
  std::vector<MatrixPair> pis;
  std::vector<MatrixPair> xis;
  std::vector<double> chis;  // 1/kappa_i

  int N() const { return (int)gammas.size(); }
  /// 1-based accessors matching the cyclic index convention.
  const MatrixPair& pi(int i) const { return pis[(size_t)i - 1]; }
  const MatrixPair& xi(int i) const { return xis[(size_t)i - 1]; }
  const WaveVector& gamma(int i) const { return gammas[(size_t)i - 1]; }
  double kappa(int i) const { return kappas[(size_t)i - 1]; }
  double chi(int i) const { return chis[(size_t)i - 1]; }
};

struct CoeffMatrix {
  int N = 0;
  std::vector<double> nu;  // row-major
  /// nu_i^j, 1-based.
  double at(int i, int j) const { return nu[(size_t)(i - 1) * N + (j - 1)]; }
  double& at(int i, int j) { return nu[(size_t)(i - 1) * N + (j - 1)]; }
};

/// Coefficients of the cyclic system P_{k+1} = t_k X_k + (1 - t_k) P_k
/// (indices mod N): row i gives P_i = sum_j nu_i^j X_j. Every row sums to 1
/// and all entries lie in (0,1).
CoeffMatrix cyclic_coeffs(const std::vector<double>& t);

/// Validate and derive a full configuration. The last gamma is recomputed as
/// minus the sum of the others (making the zero-sum exact); the supplied one
/// must agree within 1e-9.
TNConfig build_tn(const MatrixPair& rho, std::vector<WaveVector> gammas,
                  std::vector<double> kappas);

/// Distance from x to the segment union of the configuration.
double tn_distance(const TNConfig& cfg, const MatrixPair& x);

/// Weights nu_j with lambda xi_i + (1 - lambda) pi_i = sum_j nu_j xi_j,
/// i 1-based.
std::vector<double> corner_weights(const TNConfig& cfg, int i, double lambda);

}  // namespace wildgrad
