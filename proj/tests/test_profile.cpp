#include <cmath>

#include <doctest.h>

#include "wildgrad/blocks.hpp"
#include "wildgrad/core.hpp"
#include "wildgrad/rng.hpp"
#include "support.hpp"

using namespace wildgrad;

TEST_CASE("smoothstep endpoints, symmetry and slope") {
  CHECK(smoothstep(-1) == 0);
  CHECK(smoothstep(0) == 0);
  CHECK(smoothstep(1) == 1);
  CHECK(smoothstep(2) == 1);
  CHECK(smoothstep(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  for (double u : {0.1, 0.23, 0.4, 0.77}) {
    CHECK(smoothstep(u) + smoothstep(1 - u) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(smoothstep(u) > 0);
    CHECK(smoothstep(u) < 1);
  }
  // The slope peaks at exactly 2 in the middle.
  CHECK(smoothstep_prime(0.5) == doctest::Approx(2.0).epsilon(1e-13));
  double worst = 0;
  for (int i = 0; i <= 20000; ++i) worst = std::max(worst, smoothstep_prime(i / 20000.0));
  CHECK(worst <= smoothstep_max_slope + 1e-9);
  // Derivative matches a central difference away from the flat tails.
  for (double u : {0.05, 0.2, 0.5, 0.8, 0.95}) {
    double h = 1e-6;
    double fd = (smoothstep(u + h) - smoothstep(u - h)) / (2 * h);
    CHECK(smoothstep_prime(u) == doctest::Approx(fd).epsilon(1e-7));
  }
}

TEST_CASE("smoothstep integral matches independent quadrature") {
  CHECK(smoothstep_integral(0) == 0);
  CHECK(smoothstep_integral(1) == 0.5);
  CHECK(smoothstep_integral(-0.5) == 0);
  for (double v : {0.03, 0.2, 0.45, 0.5, 0.6, 0.91, 1.0}) {
    double ref = testsupport::integrate([](double u) { return smoothstep(u); }, 0, v, 1e-15);
    CHECK(std::abs(smoothstep_integral(v) - ref) <= 1e-12);
  }
  // The integral's derivative is the step itself.
  for (double v : {0.1, 0.33, 0.5, 0.74, 0.9}) {
    double h = 1e-6;
    double fd = (smoothstep_integral(v + h) - smoothstep_integral(v - h)) / (2 * h);
    CHECK(fd == doctest::Approx(smoothstep(v)).epsilon(1e-8));
  }
}

TEST_CASE("profile layout pins") {
  Profile pr = make_profile(0.5, 0.1);
  CHECK(!pr.trivial);
  double gI = std::cbrt(0.9);
  CHECK(pr.i1 == gI * 0.5);
  CHECK(pr.i2 == gI * 0.5);
  CHECK(pr.w == std::min(0.02, (1 - gI) / 8));
  CHECK(pr.w1 == pr.w * 0.5);
  // Segments tile [0,1) exactly up to rounding.
  CHECK(pr.b8 + pr.gap == doctest::Approx(1.0).epsilon(1e-14));
  // Plateau phase intervals have the advertised lengths.
  CHECK(intervals_length(pr.plateau1()) == doctest::Approx(gI * 0.5).epsilon(1e-14));
  CHECK(intervals_length(pr.plateau2()) == doctest::Approx(gI * 0.5).epsilon(1e-14));
}

TEST_CASE("trivial profiles vanish") {
  for (double lam : {0.0, 1.0}) {
    Profile pr = make_profile(lam, 0.25);
    CHECK(pr.trivial);
    for (double t : {0.0, 0.1, 0.5, 0.99, 3.7, -2.3}) {
      CHECK(pr.q(t) == 0);
      CHECK(pr.f(t) == 0);
    }
    CHECK(pr.f_max == 0);
  }
  CHECK_THROWS_AS((void)make_profile(0.5, 0.0), Error);
  CHECK_THROWS_AS((void)make_profile(0.5, 1.0), Error);
  CHECK_THROWS_AS((void)make_profile(-0.1, 0.5), Error);
  CHECK_THROWS_AS((void)make_profile(1.5, 0.5), Error);
}

TEST_CASE("profile plateau values are exact and the range is [-lambda, 1-lambda]") {
  for (double lam : {0.3, 0.5, 0.7, 0.925}) {
    Profile pr = make_profile(lam, 0.1);
    // Exact plateau values strictly inside the plateau phases.
    for (double s : {0.05, 0.3, 0.62, 0.95}) {
      CHECK(pr.q(pr.b2 + s * pr.i1) == 1 - lam);
      CHECK(pr.q(pr.b6 + s * pr.i2) == -lam);
    }
    // Zero gaps: both q and f vanish identically on the outer gaps.
    for (double s : {0.0, 0.4, 0.9}) {
      CHECK(pr.q(s * pr.gap) == 0);
      CHECK(pr.f(s * pr.gap) == 0);
      CHECK(pr.q(pr.b8 + s * pr.gap) == 0);
      CHECK(pr.f(pr.b8 + s * pr.gap) == 0);
    }
    // Range and periodicity on a dense grid. Shifted arguments land on
    // slightly different representable points, hence the slope allowance.
    for (int i = 0; i < 5000; ++i) {
      double t = i / 5000.0;
      double q = pr.q(t);
      CHECK(q >= -lam);
      CHECK(q <= 1 - lam);
      CHECK(std::abs(pr.q(t + 7) - q) <= 1e-9);
      CHECK(std::abs(pr.f(t - 3) - pr.f(t)) <= 1e-9);
      CHECK(pr.f(t) >= -1e-15);
      CHECK(pr.f(t) <= pr.f_max * (1 + 1e-12));
    }
    CHECK(pr.f(0.0) == 0);
    CHECK(pr.f_max == pr.f_mid);
  }
}

TEST_CASE("profile mean vanishes against adaptive quadrature") {
  Rng rng(0x9f11e5);
  for (int it = 0; it < 20; ++it) {
    double lam = it < 2 ? (it == 0 ? 0.01 : 0.99) : rng.uniform(0.05, 0.95);
    double eps = rng.uniform(0.01, 0.6);
    Profile pr = make_profile(lam, eps);
    double mean = testsupport::integrate([&](double t) { return pr.q(t); }, 0, 1, 1e-14);
    CHECK(std::abs(mean) <= 1e-12);
  }
}

TEST_CASE("profile antiderivative differentiates back to q") {
  Profile pr = make_profile(0.7, 0.1);
  Rng rng(0xfeed5);
  for (int it = 0; it < 1000; ++it) {
    double t = rng.uniform();
    double h = 1e-7;
    double fd = (pr.f(t + h) - pr.f(t - h)) / (2 * h);
    CHECK(std::abs(fd - pr.q(t)) <= 1e-5);
  }
  // And f is the running integral of q from 0.
  for (double t : {0.15, 0.33, 0.5, 0.77, 0.98}) {
    double ref = testsupport::integrate([&](double s) { return pr.q(s); }, 0, t, 1e-14);
    CHECK(std::abs(pr.f(t) - ref) <= 1e-11);
  }
}

TEST_CASE("plateau phase sets pull back to exact measures") {
  // Over an interval that spans whole periods the level sets {q = 1-lambda}
  // and {q = -lambda} occupy exactly their plateau lengths.
  Profile pr = make_profile(0.7, 0.1);
  Box b = Box::cube(Vec{0.5}, 0.5);
  Vec a{1.0};
  double m1 = periodic_slab_volume(b, a, 0.05, pr.plateau1());
  double m2 = periodic_slab_volume(b, a, 0.05, pr.plateau2());
  CHECK(m1 == doctest::Approx(pr.i1).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(pr.i2).epsilon(1e-12));
}
