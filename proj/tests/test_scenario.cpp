#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "support.hpp"
#include "wildgrad/rng.hpp"
#include "wildgrad/scenario.hpp"

using namespace wildgrad;

namespace {

MatrixPair pair1(double a, double b) {
  return MatrixPair(Mat::from_rows({{a}}), Mat::from_rows({{b}}));
}

WaveVector wave1(double p) {
  WaveVector g;
  g.p = Vec{p};
  g.a = Vec{1};
  g.B = Mat(1, 1);
  return g;
}

/// Reassemble a witness from the scenario maps alone and measure how far it
/// lands from the query, plus the cone defect of its segment direction.
double witness_defect(const Scenario& s, const MatrixPair& Y,
                      const Decomposition& w) {
  MatrixPair moving = zeta(s, w.i, w.lambda_prime, w.rho);
  MatrixPair fixed = anchor(s, w.i, w.rho_prime);
  MatrixPair seg = w.q * moving + (1 - w.q) * fixed;
  MatrixPair step = moving - fixed;
  return dist(seg, Y) + wave_cone_residual(step.first, step.second);
}

Scenario with_kappa(std::vector<double> ks) {
  Scenario s = two_branch_scenario();
  s.kappa_map = [ks](const MatrixPair&) { return ks; };
  s.decomposer = nullptr;
  return s;
}

/// Three scalar branches whose first two corner images coincide.
Scenario overlapping_corners() {
  Scenario s;
  s.name = "overlap";
  s.m = 1;
  s.n = 1;
  s.N = 3;
  s.r0 = 0.1;
  s.delta1 = 0.2;
  s.delta2 = 0.6;
  s.kappa_map = [](const MatrixPair&) { return std::vector<double>{3, 2, 2}; };
  s.gamma_map = [](const MatrixPair&) {
    return std::vector<WaveVector>{wave1(1), wave1(1), wave1(-2)};
  };
  s.sigma = [](const Mat& X) { return X; };
  return s;
}

ScenarioMaps two_branch_maps() {
  Scenario s = two_branch_scenario();
  ScenarioMaps m;
  m.name = "gf";
  m.m = s.m;
  m.n = s.n;
  m.N = s.N;
  m.r0 = s.r0;
  m.delta1 = s.delta1;
  m.delta2 = s.delta2;
  m.kappa_map = s.kappa_map;
  m.gamma_map = s.gamma_map;
  return m;
}

}  // namespace

TEST_CASE("two-branch pinned values") {
  Scenario s = two_branch_scenario();
  CHECK(s.m == 1);
  CHECK(s.n == 1);
  CHECK(s.N == 2);
  CHECK(s.r0 == 0.1);
  CHECK(s.delta1 == 0.2);
  CHECK(s.delta2 == 0.6);

  MatrixPair zero = pair1(0, 0);
  CHECK(corner(s, 1, zero).first.at(0, 0) == 2.0);
  CHECK(corner(s, 1, zero).second.at(0, 0) == 0.0);
  CHECK(corner(s, 2, zero).first.at(0, 0) == -2.0);
  CHECK(anchor(s, 1, zero).first.at(0, 0) == 0.0);
  CHECK(anchor(s, 2, zero).first.at(0, 0) == 1.0);
  CHECK(anchor(s, 2, zero).second.at(0, 0) == 0.0);

  CHECK(s.sigma(Mat::from_rows({{2.0}})).at(0, 0) == 0.0);
  CHECK(s.sigma(Mat::from_rows({{-2.0}})).at(0, 0) == 0.0);
  CHECK(s.sigma(Mat::from_rows({{0.5}})).at(0, 0) == -0.5);
  CHECK(s.sigma(Mat::from_rows({{3.0}})).at(0, 0) == 1.0);
  CHECK(s.sigma(Mat::from_rows({{-3.0}})).at(0, 0) == -1.0);

  MatrixPair rho = pair1(0.03, -0.02);
  auto gs = s.gamma_map(rho);
  REQUIRE(gs.size() == 2);
  CHECK(norm(gs[0].pair() + gs[1].pair()) == 0.0);
  auto ks = s.kappa_map(rho);
  CHECK(std::abs(ks[0] - 1.95) <= 1e-15);
  CHECK(std::abs(ks[1] - 3.05) <= 1e-15);

  for (int i = 1; i <= 2; ++i) {
    MatrixPair step = corner(s, i, rho) - anchor(s, i, rho);
    MatrixPair expect = ks[(size_t)i - 1] * gs[(size_t)i - 1].pair();
    CHECK(dist(step, expect) <= 1e-15);
  }
}

TEST_CASE("zeta endpoints and preconditions") {
  Scenario s = two_branch_scenario();
  MatrixPair rho = pair1(-0.04, 0.06);
  for (int i = 1; i <= 2; ++i) {
    CHECK(dist(zeta(s, i, 0.0, rho), anchor(s, i, rho)) == 0.0);
    CHECK(dist(zeta(s, i, 1.0, rho), corner(s, i, rho)) == 0.0);
  }
  CHECK(zeta(s, 1, 0.7, pair1(0, 0)).first.at(0, 0) == 1.4);
  CHECK(zeta(s, 1, 0.7, pair1(0, 0)).second.at(0, 0) == 0.0);
  CHECK(std::abs(zeta(s, 2, 0.7, pair1(0, 0)).first.at(0, 0) - (-1.1)) <= 1e-14);

  CHECK_THROWS_AS((void)zeta(s, 1, 0.5, pair1(0.2, 0)), Error);
  CHECK_THROWS_AS((void)zeta(s, 3, 0.5, pair1(0, 0)), Error);
  CHECK_THROWS_AS((void)zeta(s, 1, 1.5, pair1(0, 0)), Error);
  try {
    (void)zeta(s, 1, 0.5, pair1(0.2, 0));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::precondition);
  }
}

TEST_CASE("pi_decomposition reconstructs the anchor") {
  Scenario s = two_branch_scenario();
  const std::vector<MatrixPair> rhos = {pair1(0, 0), pair1(0.03, -0.04),
                                        pair1(-0.06, 0.02)};
  for (double lam : {0.7, 0.9, 1.0})
    for (const auto& rho : rhos)
      for (int i = 1; i <= 2; ++i) {
        auto nu = pi_decomposition(s, i, lam, rho);
        REQUIRE(nu.size() == 2);
        double sum = nu[0] + nu[1];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        double low = std::pow(lam - s.delta2, s.N - 1) * s.delta1;
        CHECK(nu[0] >= low - 1e-12);
        CHECK(nu[1] >= low - 1e-12);

        MatrixPair rec = MatrixPair::zero(1, 1);
        for (int j = 1; j <= 2; ++j)
          rec = rec + nu[(size_t)j - 1] * zeta(s, j, lam, rho);
        CHECK(dist(rec, anchor(s, i, rho)) <= 1e-10);
      }

  // Independent fixed-point oracle for the same coefficients, entry-wise.
  {
    double lam = 0.9;
    MatrixPair rho = pair1(0.03, -0.04);
    auto ks = s.kappa_map(rho);
    std::vector<double> t = {1 / (ks[0] * lam), 1 / (ks[1] * lam)};
    for (int e = 0; e < 2; ++e) {
      std::vector<double> X = {zeta(s, 1, lam, rho).flat(e),
                               zeta(s, 2, lam, rho).flat(e)};
      auto P = testsupport::cyclic_fixed_point(t, X);
      CHECK(std::abs(P[0] - anchor(s, 1, rho).flat(e)) <= 1e-10);
      CHECK(std::abs(P[1] - anchor(s, 2, rho).flat(e)) <= 1e-10);
    }
  }

  auto nu = pi_decomposition(s, 1, 1.0, pair1(0, 0));
  CHECK(std::abs(nu[0] - 0.5) <= 1e-14);
  CHECK(std::abs(nu[1] - 0.5) <= 1e-14);

  CHECK_THROWS_AS((void)pi_decomposition(s, 1, 0.6, pair1(0, 0)), Error);
  CHECK_THROWS_AS((void)pi_decomposition(s, 1, 0.5, pair1(0, 0)), Error);
  CHECK_THROWS_AS((void)pi_decomposition(s, 1, 1.2, pair1(0, 0)), Error);
  CHECK_THROWS_AS((void)pi_decomposition(s, 1, 0.9, pair1(0.1, 0)), Error);
}

TEST_CASE("wave_cone_residual") {
  CHECK(wave_cone_residual(Mat::from_rows({{0.3}}), Mat(1, 1)) <= 1e-12);
  CHECK(std::abs(wave_cone_residual(Mat::from_rows({{0.3}}),
                                    Mat::from_rows({{0.2}})) -
                 0.2) <= 1e-12);
  CHECK(std::abs(wave_cone_residual(Mat(1, 1), Mat::from_rows({{0.4}})) - 0.4) <=
        1e-12);
  CHECK(wave_cone_residual(Mat(1, 1), Mat(1, 1)) == 0.0);

  // Rank-one with a matching kernel: p (x) a with B a = 0.
  Mat U = Mat::from_rows({{3.0, -1.0}, {6.0, -2.0}});
  Mat B = Mat::from_rows({{1.0, 3.0}, {2.0, 6.0}});
  CHECK(wave_cone_residual(U, B) <= 1e-10);

  // Identity V pinned against the normalized wave direction.
  CHECK(std::abs(wave_cone_residual(U, Mat::from_rows({{1.0, 0.0}, {0.0, 1.0}})) -
                 1.0) <= 1e-10);

  // Rank-two first slot cannot sit on a single wave direction.
  CHECK(wave_cone_residual(Mat::from_rows({{1.0, 0.0}, {0.0, 1.0}}), Mat(2, 2)) >=
        0.9);
}

TEST_CASE("classify_S membership and certificates") {
  Scenario s = two_branch_scenario();

  MatrixPair rho = pair1(0.01, 0.05);
  MatrixPair Y = zeta(s, 1, 0.8, rho);
  ClassifyResult hit = classify_S(s, 0.1, 0.8, Y);
  REQUIRE(bool(hit));
  CHECK(hit.i == 1);
  CHECK(dist(hit.rho, rho) <= 1e-8);
  CHECK(hit.residual <= 1e-10 * (1 + norm(Y)));

  MatrixPair rho2 = pair1(0.02, -0.03);
  ClassifyResult plateau = classify_S(s, 0.1, 0.0, anchor(s, 2, rho2));
  REQUIRE(bool(plateau));
  CHECK(plateau.i == 2);
  CHECK(dist(plateau.rho, rho2) <= 1e-8);

  CHECK(classify_S(s, 0.1, 0.8, pair1(10, 10)).status == Membership::not_member);
  CHECK(classify_S(s, 0.1, 0.8, pair1(0, 0.5)).status == Membership::not_member);

  // A point reachable only outside the queried radius must not be a member.
  MatrixPair far = zeta(s, 1, 0.8, pair1(0, 0.09));
  CHECK(classify_S(s, 0.02, 0.8, far).status != Membership::member);

  // Determinism: repeated calls give bitwise-equal witnesses.
  ClassifyResult again = classify_S(s, 0.1, 0.8, Y);
  CHECK(again.i == hit.i);
  CHECK(dist(again.rho, hit.rho) == 0.0);
  CHECK(again.residual == hit.residual);

  CHECK_THROWS_AS((void)classify_S(s, 0.0, 0.8, Y), Error);
  CHECK_THROWS_AS((void)classify_S(s, 0.2, 0.8, Y), Error);
  CHECK_THROWS_AS((void)classify_S(s, 0.1, 0.3, Y), Error);
}

TEST_CASE("decompose_Sigma closed form on the two-branch data") {
  Scenario s = two_branch_scenario();

  DecomposeResult tight = decompose_Sigma(s, 0.002, 0.7, pair1(1.4, 0));
  REQUIRE(bool(tight));
  CHECK(tight.witness.i == 1);
  CHECK(tight.witness.lambda_prime == 0.7);
  CHECK(tight.witness.q == 1.0);
  CHECK(norm(tight.witness.rho) <= 1e-12);
  CHECK(witness_defect(s, pair1(1.4, 0), tight.witness) <= 1e-12);

  DecomposeResult wide = decompose_Sigma(s, 0.1, 0.7, pair1(1.4, 0));
  REQUIRE(bool(wide));
  CHECK(wide.witness.lambda_prime >= 0.6);
  CHECK(wide.witness.lambda_prime <= 0.7 + 1e-12);
  CHECK(witness_defect(s, pair1(1.4, 0), wide.witness) <= 1e-9);

  DecomposeResult flat = decompose_Sigma(s, 0.1, 0.7, pair1(0.05, 0));
  REQUIRE(bool(flat));
  CHECK(flat.witness.i == 1);
  CHECK(flat.witness.q == 0.0);
  CHECK(flat.witness.lambda_prime == 0.6);
  CHECK(flat.witness.rho_prime.first.at(0, 0) == 0.05);
  CHECK(witness_defect(s, pair1(0.05, 0), flat.witness) <= 1e-12);

  DecomposeResult mix = decompose_Sigma(s, 0.1, 0.7, pair1(0.5, 0));
  REQUIRE(bool(mix));
  CHECK(mix.witness.i == 1);
  CHECK(mix.witness.lambda_prime == 0.6);
  CHECK(std::abs(mix.witness.q - 5.0 / 12) <= 1e-12);
  CHECK(witness_defect(s, pair1(0.5, 0), mix.witness) <= 1e-12);

  DecomposeResult off = decompose_Sigma(s, 0.1, 0.7, pair1(1.4, 0.15));
  CHECK(!off.found);
  CHECK(std::abs(off.best_residual - 0.05) <= 1e-12);

  DecomposeResult low = decompose_Sigma(s, 0.1, 0.65, pair1(1.4, 0));
  CHECK(!low.found);
  CHECK(std::abs(low.best_residual - 0.065) <= 1e-6);

  CHECK_THROWS_AS((void)decompose_Sigma(s, 0.1, 1.0, pair1(1.4, 0)), Error);
  CHECK_THROWS_AS((void)decompose_Sigma(s, 0.1, 0.5, pair1(1.4, 0)), Error);
  CHECK_THROWS_AS((void)decompose_Sigma(s, 0.11, 0.7, pair1(1.4, 0)), Error);
  CHECK_THROWS_AS((void)decompose_Sigma(s, 0.0, 0.7, pair1(1.4, 0)), Error);
}

TEST_CASE("decompose_Sigma round trips and nesting") {
  Scenario s = two_branch_scenario();
  Rng rng(mix_seed(9, 9, 9));
  for (int trial = 0; trial < 20; ++trial) {
    int i = 1 + (int)rng.below(2);
    double lp = rng.uniform(0.6, 0.8);
    double q = rng.uniform();
    double y2 = rng.uniform(-0.04, 0.04);
    MatrixPair rho = pair1(rng.uniform(-0.04, 0.04), y2);
    MatrixPair rhop = pair1(rng.uniform(-0.04, 0.04), y2);
    MatrixPair Y = q * zeta(s, i, lp, rho) + (1 - q) * anchor(s, i, rhop);

    DecomposeResult got = decompose_Sigma(s, 0.07, 0.8, Y);
    REQUIRE(bool(got));
    CHECK(witness_defect(s, Y, got.witness) <= 1e-9);
    CHECK(got.witness.lambda_prime >= 0.6);
    CHECK(got.witness.lambda_prime <= 0.8 + 1e-12);
    CHECK(norm(got.witness.rho) < 0.07);
    CHECK(norm(got.witness.rho_prime) < 0.07);

    // Membership is monotone in both the radius and the level.
    CHECK(bool(decompose_Sigma(s, 0.1, 0.8, Y)));
    CHECK(bool(decompose_Sigma(s, 0.07, 0.95, Y)));
    CHECK(bool(decompose_Sigma(s, 0.1, 0.9, Y)));
  }
}

TEST_CASE("generic decompose search agrees with the closed form") {
  Scenario g = two_branch_scenario();
  g.decomposer = nullptr;

  DecomposeResult hit = decompose_Sigma(g, 0.1, 0.7, pair1(1.4, 0));
  REQUIRE(bool(hit));
  CHECK(witness_defect(g, pair1(1.4, 0), hit.witness) <= 1e-8);

  DecomposeResult mix = decompose_Sigma(g, 0.1, 0.7, pair1(0.5, 0));
  REQUIRE(bool(mix));
  CHECK(witness_defect(g, pair1(0.5, 0), mix.witness) <= 1e-8);

  CHECK(!decompose_Sigma(g, 0.1, 0.65, pair1(1.4, 0)).found);
  CHECK(!decompose_Sigma(g, 0.1, 0.7, pair1(1.4, 0.15)).found);
}

TEST_CASE("set_gaps on the two-branch data") {
  Scenario s = two_branch_scenario();
  GapEstimates g = set_gaps(s, 0.05, 0.1, 0.85, 256, 7);
  CHECK(std::abs(g.d0_raw - 3.8) <= 0.02);
  CHECK(g.d0 == 0.5 * g.d0_raw);
  CHECK(g.d_prime > 1e-4);
  CHECK(g.d_prime <= 0.15);
  CHECK(g.d_prime == 0.5 * g.d_prime_raw);

  GapEstimates again = set_gaps(s, 0.05, 0.1, 0.85, 256, 7);
  CHECK(again.d_prime == g.d_prime);
  CHECK(again.d0 == g.d0);

  CHECK_THROWS_AS((void)set_gaps(s, 0.1, 0.1, 0.85, 256, 7), Error);
  CHECK_THROWS_AS((void)set_gaps(s, 0.05, 0.1, 1.0, 256, 7), Error);
  CHECK_THROWS_AS((void)set_gaps(s, 0.05, 0.1, 0.85, 8, 7), Error);

  try {
    (void)set_gaps(overlapping_corners(), 0.05, 0.1, 0.85, 256, 7);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::scenario);
  }
}

TEST_CASE("validate_scenario accepts the two-branch data") {
  Scenario s = two_branch_scenario();
  ValidationReport rep = validate_scenario(s, 1000, 3);
  CHECK(rep.ok);
  CHECK(rep.checks.size() == 8);
  for (const auto& c : rep.checks) {
    INFO(c.name, " worst=", c.worst, " ", c.detail);
    CHECK(c.pass);
  }
  CHECK(rep.summary().find("PASS") != std::string::npos);
  CHECK(rep.summary().find("FAIL") == std::string::npos);

  CHECK_THROWS_AS((void)validate_scenario(s, 100, 3), Error);
}

TEST_CASE("validate_scenario rejects broken data") {
  // Levels collide near lambda = 1/5 once delta2 drops below it.
  Scenario touching = two_branch_scenario();
  touching.delta1 = 0.1;
  touching.delta2 = 0.15;
  touching.decomposer = nullptr;
  ValidationReport rep = validate_scenario(touching, 1000, 3);
  CHECK(!rep.ok);
  bool found = false;
  for (const auto& c : rep.checks)
    if (c.name == "level set separation") {
      found = true;
      CHECK(!c.pass);
      CHECK(c.worst <= 1e-9);
    }
  CHECK(found);

  ValidationReport flat = validate_scenario(with_kappa({1.0, 1.0}), 1000, 3);
  CHECK(!flat.ok);
  for (const auto& c : flat.checks)
    if (c.name == "kappa range") CHECK(!c.pass);

  Scenario unbalanced = two_branch_scenario();
  unbalanced.decomposer = nullptr;
  unbalanced.gamma_map = [](const MatrixPair&) {
    return std::vector<WaveVector>{wave1(1), wave1(-0.5)};
  };
  ValidationReport skew = validate_scenario(unbalanced, 1000, 3);
  CHECK(!skew.ok);
  for (const auto& c : skew.checks)
    if (c.name == "gamma zero sum") CHECK(!c.pass);

  Scenario biased = two_branch_scenario();
  auto base = biased.sigma;
  biased.sigma = [base](const Mat& X) {
    Mat y = base(X);
    y.at(0, 0) += 1e-5;
    return y;
  };
  ValidationReport drift = validate_scenario(biased, 1000, 3);
  CHECK(!drift.ok);
  for (const auto& c : drift.checks)
    if (c.name == "graph fidelity") CHECK(!c.pass);
  biased.graph_tol = 1e-4;
  CHECK(validate_scenario(biased, 1000, 3).ok);
}

TEST_CASE("graph_first_scenario builds a working flux map") {
  Scenario scn = graph_first_scenario(two_branch_maps(), 512, 5);
  Scenario ref = two_branch_scenario();

  for (double t : {-0.09, -0.04, 0.0, 0.03, 0.08}) {
    CHECK(std::abs(scn.sigma(Mat::from_rows({{2 + t}})).at(0, 0) - t) <= 1e-9);
    CHECK(std::abs(scn.sigma(Mat::from_rows({{-2 + t}})).at(0, 0) - t) <= 1e-9);
    CHECK(std::abs(scn.sigma(Mat::from_rows({{2 + t}})).at(0, 0) -
                   ref.sigma(Mat::from_rows({{2 + t}})).at(0, 0)) <= 1e-9);
  }
  CHECK(validate_scenario(scn, 1000, 3).ok);

  // The constructed scenario has no closed-form solver; the generic search
  // must still decompose interior points.
  MatrixPair rho = pair1(0.02, 0.03);
  MatrixPair rhop = pair1(-0.04, 0.03);
  MatrixPair Y = 0.3 * zeta(scn, 1, 0.75, rho) + 0.7 * anchor(scn, 1, rhop);
  DecomposeResult got = decompose_Sigma(scn, 0.1, 0.8, Y);
  REQUIRE(bool(got));
  CHECK(witness_defect(scn, Y, got.witness) <= 1e-8);
}

TEST_CASE("graph_first_scenario rejects unusable data") {
  // kappa_1 = 2 - rho^1 collapses the first corner image to a point.
  ScenarioMaps flat = two_branch_maps();
  flat.kappa_map = [](const MatrixPair& rho) {
    const double r1 = rho.first.at(0, 0);
    return std::vector<double>{2 - r1, 3 + r1};
  };
  try {
    (void)graph_first_scenario(flat, 512, 5);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::scenario);
    CHECK(std::string(e.what()).find("degenerate") != std::string::npos);
  }

  // kappa_1 = 2 + (rho^2)^2 sends (0, t) and (0, -t) to the same projection
  // with different values.
  ScenarioMaps folded = two_branch_maps();
  folded.kappa_map = [](const MatrixPair& rho) {
    const double r2 = rho.second.at(0, 0);
    return std::vector<double>{2 + r2 * r2, 3 - r2 * r2};
  };
  try {
    (void)graph_first_scenario(folded, 512, 5);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::scenario);
    CHECK(std::string(e.what()).find("multivalued") != std::string::npos);
  }

  // Three branches whose first two corner images coincide as sets while
  // each patch alone stays single-valued: the cross-patch check must fire.
  ScenarioMaps lap;
  lap.m = 1;
  lap.n = 1;
  lap.N = 3;
  lap.r0 = 0.1;
  lap.delta1 = 0.2;
  lap.delta2 = 0.6;
  lap.kappa_map = [](const MatrixPair& rho) {
    const double r1 = rho.first.at(0, 0), r2 = rho.second.at(0, 0);
    return std::vector<double>{3 + r2 - r1, 2 + r2 - r1, 2.5 + (r1 - r2) / 2};
  };
  lap.gamma_map = [](const MatrixPair&) {
    return std::vector<WaveVector>{wave1(1), wave1(1), wave1(-2)};
  };
  try {
    (void)graph_first_scenario(lap, 512, 5);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::scenario);
    CHECK(std::string(e.what()).find("overlap") != std::string::npos);
  }

  CHECK_THROWS_AS((void)graph_first_scenario(two_branch_maps(), 32, 5), Error);
}

TEST_CASE("compactness_fit grid search") {
  Scenario s = two_branch_scenario();

  CompactnessFit fit = compactness_fit(s, {pair1(1.4, 0)});
  CHECK(std::abs(fit.r1 - 0.002) <= 1e-12);
  CHECK(std::abs(fit.lambda1 - 0.70) <= 1e-12);

  CompactnessFit both = compactness_fit(s, {pair1(1.4, 0), pair1(0.05, 0)});
  CHECK(both.r1 == fit.r1);
  CHECK(both.lambda1 == fit.lambda1);

  CompactnessFit empty = compactness_fit(s, {});
  CHECK(std::abs(empty.r1 - 0.002) <= 1e-12);
  CHECK(std::abs(empty.lambda1 - 0.6) <= 1e-12);

  try {
    (void)compactness_fit(s, {pair1(2, 0)});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind == Error::Kind::precondition);
  }
}
