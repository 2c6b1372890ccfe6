#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildgrad/rng.hpp"
#include "wildgrad/scenario.hpp"
#include "wildgrad/stage.hpp"

using namespace wildgrad;

namespace {

FieldTree constant_tree(const Scenario& s, const MatrixPair& Y) {
  FieldTree f;
  f.base = affine_base(Vec(s.m), Y.first, Y.second);
  return f;
}

Domain unit_interval() {
  Domain G;
  G.boxes.push_back(Box(Vec{0.5}, Vec{0.5}));
  return G;
}

const BoundRow& row(const StageReport& rep, const std::string& name) {
  for (const BoundRow& r : rep.rows)
    if (r.name == name) return r;
  throw std::runtime_error("missing row " + name);
}

Error::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind;
  }
  throw std::runtime_error("no error raised");
}

}  // namespace

TEST_CASE("affine bases evaluate exactly and patch-free fields return them") {
  const Scenario s = two_branch_scenario();
  const MatrixPair Y = zeta(s, 1, 0.7, MatrixPair::zero(1, 1));
  const FieldTree f = constant_tree(s, Y);
  const FieldValue v = eval_field(f, Vec{0.3});
  CHECK(std::fabs(v.u[0] - 0.3 * Y.first.at(0, 0)) <= 1e-15);
  CHECK(v.du.at(0, 0) == Y.first.at(0, 0));
  CHECK(v.v.at(0, 0) == Y.second.at(0, 0));
  const MatrixPair p = field_pair(f, Vec{0.9});
  CHECK(dist(p, Y) == 0);
}

TEST_CASE("stage parameters: caps, Lipschitz fallback, and the cube scale") {
  const Scenario s = two_branch_scenario();
  const FieldTree f = constant_tree(s, zeta(s, 1, 0.7, MatrixPair::zero(1, 1)));
  const Domain G = unit_interval();
  const StageParams p = stage_params(s, f, G, 0.7, 0.85, 0.02, 0.06, 0.3);

  CHECK(p.lipschitz == 0);
  CHECK(p.diam == 1.0);
  CHECK(p.ell_prime == 1.0);
  CHECK(p.d_prime > 0);
  CHECK(p.eps_prime > 0);

  // Closed-form own-share cap against a bisection oracle for the largest
  // e with (1-e)^3 (B + (1-B)(mu-delta2)^{N-1} delta1) >= B.
  const double B = 0.7 / 0.85;
  const double A = B + (1 - B) * std::pow(0.85 - s.delta2, s.N - 1) * s.delta1;
  double lo = 0, hi = 1;
  while (hi - lo > 1e-14) {
    const double e = 0.5 * (lo + hi);
    (std::pow(1 - e, 3) * A >= B ? lo : hi) = e;
  }
  const double cap_persist = 1 - std::cbrt(B / A);
  CHECK(std::fabs(cap_persist - lo) <= 1e-12);

  const double expect =
      0.9 * std::min(std::min(p.d_prime / 4, 0.3 / 2),
                     std::min(1 - 1 / std::sqrt(2.0), cap_persist));
  CHECK(std::fabs(p.eps_prime - expect) <= 1e-15);

  // The accuracy shrinks to zero as the levels approach each other.
  double prev = 1.0;
  for (const double lam : {0.70, 0.80, 0.84, 0.849}) {
    const StageParams q = stage_params(s, f, G, lam, 0.85, 0.02, 0.06, 0.3);
    CHECK(q.eps_prime <= prev);
    prev = q.eps_prime;
  }
  CHECK(prev < p.eps_prime);
  CHECK(stage_params(s, f, G, 0.8499, 0.85, 0.02, 0.06, 0.3).eps_prime < 1e-4);
}

TEST_CASE("stage parameter preconditions") {
  const Scenario s = two_branch_scenario();
  const FieldTree f = constant_tree(s, zeta(s, 1, 0.7, MatrixPair::zero(1, 1)));
  const Domain G = unit_interval();
  CHECK(kind_of([&] { stage_params(s, f, G, 0.7, 0.85, 0.06, 0.02, 0.3); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { stage_params(s, f, G, 0.7, 0.85, 0.02, 0.2, 0.3); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { stage_params(s, f, G, 0.9, 0.85, 0.02, 0.06, 0.3); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { stage_params(s, f, G, 0.7, 1.0, 0.02, 0.06, 0.3); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { stage_params(s, f, G, 0.7, 0.85, 0.02, 0.06, 0.0); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { stage_params(s, f, G, 0.7, 0.85, 0.02, 0.06, 1.0); }) ==
        Error::Kind::precondition);
}

TEST_CASE("classification pins constant branch values and rejects outsiders") {
  const Scenario s = two_branch_scenario();
  const Domain G = unit_interval();

  const FieldTree on = constant_tree(s, zeta(s, 1, 0.7, MatrixPair::zero(1, 1)));
  const DomainLabels a = classify_domain(s, on, G, 0.02, 0.7, 4);
  CHECK(a.cells.size() == 4);
  for (const int l : a.label) CHECK(l == 1);
  CHECK(std::fabs(a.labeled_volume[1] - 1.0) <= 1e-12);
  CHECK(a.labeled_volume[0] == 0);
  CHECK(a.deficit == 0);
  CHECK(a.rounds == 0);

  MatrixPair far = MatrixPair::zero(1, 1);
  far.first.at(0, 0) = 10;
  const FieldTree off = constant_tree(s, far);
  const DomainLabels b = classify_domain(s, off, G, 0.02, 0.7, 4);
  CHECK(b.cells.size() == 4);
  for (const int l : b.label) CHECK(l == 0);
  CHECK(std::fabs(b.labeled_volume[0] - 1.0) <= 1e-12);
  CHECK(b.miss_estimate[1] == 0);
  CHECK(b.miss_estimate[2] == 0);

  CHECK(kind_of([&] { classify_domain(s, on, G, 0.2, 0.7, 4); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { classify_domain(s, on, G, 0.02, 0.5, 4); }) ==
        Error::Kind::precondition);
  CHECK(kind_of([&] { classify_domain(s, on, G, 0.02, 0.7, 0); }) ==
        Error::Kind::precondition);
}

TEST_CASE("full pass: every recorded bound holds and the field leaves G intact") {
  const Scenario s = two_branch_scenario();
  const MatrixPair Y = zeta(s, 1, 0.7, MatrixPair::zero(1, 1));
  const Domain G = unit_interval();

  StageResult res =
      run_stage(s, constant_tree(s, Y), G, 0.7, 0.85, 0.02, 0.06, 0.3);
  const StageReport& rep = res.report;
  CHECK(rep.all_pass);
  for (const BoundRow& r : rep.rows) CHECK(r.pass);

  CHECK(std::fabs(row(rep, "corner-mass-1").required - 0.00375) <= 1e-15);
  CHECK(std::fabs(row(rep, "corner-mass-2").required - 0.00375) <= 1e-15);
  CHECK(std::fabs(row(rep, "persistence-1").required - 0.7 / 0.85) <= 1e-12);
  CHECK(row(rep, "membership").achieved == 1.0);
  CHECK(row(rep, "boundary").achieved == 0.0);
  CHECK(row(rep, "cube-radius").achieved < std::min(rep.params.ell_prime, 0.3));
  CHECK(row(rep, "linf-delta").achieved < rep.params.eps_prime * (1 + 1e-12));

  CHECK(rep.cube_count >= 2);
  CHECK(res.field.patches.size() == (size_t)rep.cube_count);
  CHECK(std::fabs(rep.covered - 1.0) <= 1e-9);
  double total = 0;
  for (int k = 1; k <= s.N; ++k) total += rep.corner_mass[(size_t)k];
  CHECK(std::fabs(total - rep.pinned_total) <= 1e-12);
  CHECK(rep.pinned_total >= 0.7 * rep.g_volume);
  CHECK(rep.f0_volume == 0);

  // Boundary and exterior values are the base, interior values moved.
  const FieldValue at0 = eval_field(res.field, Vec{0.0});
  CHECK(at0.du.at(0, 0) == Y.first.at(0, 0));
  CHECK(at0.u[0] == 0);
  bool moved = false;
  Rng rng(17);
  for (int it = 0; it < 256 && !moved; ++it)
    moved = std::fabs(field_pair(res.field, Vec{rng.uniform()}).first.at(0, 0) -
                      Y.first.at(0, 0)) > 0.1;
  CHECK(moved);

  // The written field satisfies the next pass's membership precondition.
  bool member = true;
  Rng rng2(23);
  for (int it = 0; it < 64 && member; ++it)
    member = decompose_Sigma(s, 0.06, 0.85,
                             field_pair(res.field, Vec{rng2.uniform()}))
                 .found;
  CHECK(member);

  // Determinism and the serialized form.
  StageResult res2 =
      run_stage(s, constant_tree(s, Y), G, 0.7, 0.85, 0.02, 0.06, 0.3);
  CHECK(report_json(rep) == report_json(res2.report));
  const nlohmann::json j = nlohmann::json::parse(report_json(rep));
  CHECK(j["all_pass"].get<bool>());
  CHECK(j["rows"]["corner-mass-1"]["pass"].get<bool>());
  CHECK(j["rows"]["persistence-2"].contains("achieved"));
}

TEST_CASE("near-equal levels keep almost the whole branch volume") {
  const Scenario s = two_branch_scenario();
  const MatrixPair Y = zeta(s, 1, 0.7, MatrixPair::zero(1, 1));
  const Domain G = unit_interval();
  StageResult res =
      run_stage(s, constant_tree(s, Y), G, 0.7, 0.71, 0.02, 0.06, 0.3);
  const BoundRow& r = row(res.report, "persistence-1");
  CHECK(std::fabs(r.required - 0.7 / 0.71) <= 1e-12);
  CHECK(r.pass);
  CHECK(res.report.corner_mass[1] >= 0.7 / 0.71);
}

TEST_CASE("a corner start fails the membership precondition") {
  const Scenario s = two_branch_scenario();
  const Domain G = unit_interval();
  FieldTree f = constant_tree(s, corner(s, 1, MatrixPair::zero(1, 1)));
  CHECK(kind_of([&] {
          run_stage(s, std::move(f), G, 0.7, 0.85, 0.02, 0.06, 0.3);
        }) == Error::Kind::precondition);
}

TEST_CASE("worker count is positive") { CHECK(run_workers() >= 1); }
