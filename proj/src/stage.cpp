#include "wildgrad/stage.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "json.hpp"
#include "wildgrad/rng.hpp"

#ifdef WILDGRAD_HAVE_OPENMP
#include <omp.h>
#endif

namespace wildgrad {

// ============================================================
// Fields
// ============================================================

FieldBase affine_base(const Vec& u0, const Mat& du0, const Mat& v0) {
  if (du0.m != u0.n || v0.m != du0.m || v0.n != du0.n)
    throw internal_error("affine_base: shape mismatch");
  FieldBase b;
  b.m = du0.m;
  b.n = du0.n;
  b.u = [u0, du0](const Vec& x) { return u0 + mat_vec(du0, x); };
  b.du = [du0](const Vec&) { return du0; };
  b.v = [v0](const Vec&) { return v0; };
  return b;
}

FieldValue eval_field(const FieldTree& f, const Vec& x) {
  FieldValue out{f.base.u(x), f.base.du(x), f.base.v(x)};
  for (const FieldPatch& p : f.patches) {
    if (!p.cube.contains(x)) continue;
    const BlockEval ev = eval_perturbation(p.node, x);
    out.u = out.u + ev.phi;
    out.du = out.du + ev.dphi;
    out.v = out.v + ev.psi;
    break;
  }
  return out;
}

MatrixPair field_pair(const FieldTree& f, const Vec& x) {
  MatrixPair out(f.base.du(x), f.base.v(x));
  for (const FieldPatch& p : f.patches) {
    if (!p.cube.contains(x)) continue;
    const BlockEval ev = eval_perturbation(p.node, x);
    out.first = out.first + ev.dphi;
    out.second = out.second + ev.psi;
    break;
  }
  return out;
}

int run_workers() {
  static const int cap = [] {
    const char* e = std::getenv("WILDGRAD_THREADS");
    if (!e || !*e) return 1 << 16;
    const long v = std::strtol(e, nullptr, 10);
    if (v < 1) return 1 << 16;
    return (int)std::min<long>(v, 1 << 16);
  }();
#ifdef WILDGRAD_HAVE_OPENMP
  return std::max(1, std::min(cap, omp_get_max_threads()));
#else
  return std::min(cap, 1);
#endif
}

namespace {

double domain_diameter(const Domain& G) {
  double best = 0;
  for (const Box& a : G.boxes)
    for (const Box& b : G.boxes) {
      double s2 = 0;
      for (int d = 0; d < a.dim(); ++d) {
        const double sep = std::max((a.center[d] + a.half[d]) - (b.center[d] - b.half[d]),
                                    (b.center[d] + b.half[d]) - (a.center[d] - a.half[d]));
        s2 += sep * sep;
      }
      best = std::max(best, std::sqrt(s2));
    }
  return best;
}

Vec random_point(const Domain& G, Rng& rng) {
  double pick = rng.uniform() * G.volume();
  for (const Box& b : G.boxes) {
    const double v = b.volume();
    if (pick <= v) return rng.point_in(b);
    pick -= v;
  }
  return rng.point_in(G.boxes.back());
}

}  // namespace

// ============================================================
// Stage parameters
// ============================================================

StageParams stage_params(const Scenario& s, const FieldTree& field,
                         const Domain& G, double lambda, double mu, double r,
                         double s_rad, double eps, uint64_t seed) {
  if (!(r > 0) || !(r < s_rad) || !(s_rad <= s.r0))
    throw precondition_error("stage_params: need 0 < r < s <= r0, got r=" +
                             str(r) + " s=" + str(s_rad));
  if (!(lambda >= s.delta2) || !(lambda < mu) || !(mu < 1))
    throw precondition_error("stage_params: need delta2 <= lambda < mu < 1, got lambda=" +
                             str(lambda) + " mu=" + str(mu));
  if (!(eps > 0) || !(eps < 1))
    throw precondition_error("stage_params: eps must lie in (0, 1)");
  if (G.boxes.empty()) throw precondition_error("stage_params: empty domain");

  StageParams p;
  p.lambda = lambda;
  p.mu = mu;
  p.r = r;
  p.s = s_rad;
  p.eps = eps;
  p.d_prime = set_gaps(s, r, s_rad, mu, 128, 0x9a9ce11dULL).d_prime;

  // Accuracy: stay below a quarter of the transverse gap and half of the
  // stage tolerance, keep (1-eps')^2 >= 1/2, and keep enough of each
  // cube's own-corner share that three (1-eps') factors still beat the
  // level ratio B = lambda/mu.
  const double B = lambda / mu;
  const double A = B + (1 - B) * std::pow(mu - s.delta2, s.N - 1) * s.delta1;
  const double cap_gap = p.d_prime / 4;
  const double cap_eps = eps / 2;
  const double cap_root = 1 - 1 / std::sqrt(2.0);
  const double cap_persist = 1 - std::cbrt(B / A);
  p.eps_prime =
      0.9 * std::min(std::min(cap_gap, cap_eps), std::min(cap_root, cap_persist));
  if (!(p.eps_prime > 0))
    throw scenario_error("stage_params: accuracy collapsed to zero");

  p.diam = domain_diameter(G);
  Rng rng(mix_seed(seed, 0x11bULL, 0));
  double worst = 0;
  for (int it = 0; it < 10000; ++it) {
    const Vec x = random_point(G, rng);
    const Vec y = random_point(G, rng);
    const double d = norm(x - y);
    if (d < 0.005 * p.diam) continue;
    worst = std::max(worst, dist(field_pair(field, x), field_pair(field, y)) / d);
  }
  p.lipschitz = 2 * worst;

  const double budget = std::min(cap_gap, p.eps_prime);
  p.ell_prime =
      p.lipschitz <= 1e-12 ? p.diam : std::min(p.diam, budget / p.lipschitz);
  return p;
}

// ============================================================
// Domain classification
// ============================================================

namespace {

void push_grid(const Box& b, int grid, std::vector<Box>* out) {
  Vec h(b.dim());
  for (int d = 0; d < b.dim(); ++d) h[d] = b.half[d] / grid;
  std::vector<int> ix(b.dim(), 0);
  while (true) {
    Vec c(b.dim());
    for (int d = 0; d < b.dim(); ++d)
      c[d] = b.center[d] - b.half[d] + (2 * ix[d] + 1) * h[d];
    out->push_back(Box(c, h));
    int d = 0;
    while (d < b.dim() && ++ix[d] == grid) ix[d++] = 0;
    if (d == b.dim()) break;
  }
}

}  // namespace

DomainLabels classify_domain(const Scenario& s, const FieldTree& field,
                             const Domain& G, double r, double lambda,
                             int grid, double deficit_target, uint64_t seed) {
  if (!(r > 0) || !(r <= s.r0))
    throw precondition_error("classify_domain: radius out of range");
  if (!(lambda >= s.delta2) || !(lambda < 1))
    throw precondition_error("classify_domain: level out of range");
  if (grid < 1) throw precondition_error("classify_domain: grid must be >= 1");
  validate_domain(G);

  const double eta = 0.05;
  const double gap = set_gaps(s, (1 - eta) * r, r, lambda, 128, 0x9a9ce11eULL).d_prime;
  const double g_volume = G.volume();

  DomainLabels out;
  out.labeled_volume.assign(s.N + 1, 0.0);
  out.miss_estimate.assign(s.N + 1, 0.0);
  out.miss_half.assign(s.N + 1, 0.0);

  std::vector<Box> work;
  for (const Box& b : G.boxes) push_grid(b, grid, &work);

  auto classify_cell = [&](const Box& cell, uint64_t idx) -> int {
    const MatrixPair center = field_pair(field, cell.center);
    const ClassifyResult at_center = classify_S(s, (1 - eta) * r, lambda, center);
    if (!at_center) return 0;
    std::vector<Vec> pts;
    const int n = cell.dim();
    for (int mask = 0; mask < (1 << n); ++mask) {
      Vec p(n);
      for (int d = 0; d < n; ++d)
        p[d] = cell.center[d] + (((mask >> d) & 1) ? 1 : -1) * cell.half[d];
      pts.push_back(p);
    }
    Rng rng(mix_seed(seed, 0xce11ULL, idx));
    for (int k = 0; k < 8; ++k) pts.push_back(rng.point_in(cell));
    for (const Vec& p : pts) {
      const MatrixPair v = field_pair(field, p);
      if (dist(v, center) > gap) return 0;
      const ClassifyResult cls = classify_S(s, r, lambda, v);
      if (!cls || cls.i != at_center.i) return 0;
    }
    return at_center.i;
  };

  const int max_rounds = 9;
  const uint64_t cell_budget = uint64_t(1) << 18;
  int round = 0;
  std::vector<Box> unresolved;
  while (true) {
    const int64_t W = (int64_t)work.size();
    std::vector<int> lab((size_t)W, 0);
    const int workers = run_workers();
    if (workers > 1) {
#ifdef WILDGRAD_HAVE_OPENMP
#pragma omp parallel for num_threads(workers) schedule(dynamic)
#endif
      for (int64_t i = 0; i < W; ++i)
        lab[(size_t)i] = classify_cell(work[(size_t)i],
                                       (uint64_t(round) << 40) ^ (uint64_t)i);
    } else {
      for (int64_t i = 0; i < W; ++i)
        lab[(size_t)i] = classify_cell(work[(size_t)i],
                                       (uint64_t(round) << 40) ^ (uint64_t)i);
    }
    unresolved.clear();
    for (int64_t i = 0; i < W; ++i) {
      if (lab[(size_t)i] > 0) {
        out.cells.push_back(work[(size_t)i]);
        out.label.push_back(lab[(size_t)i]);
        out.labeled_volume[lab[(size_t)i]] += work[(size_t)i].volume();
      } else {
        unresolved.push_back(work[(size_t)i]);
      }
    }

    // Sampled bound on the branch volume the labeling missed so far.
    {
      std::fill(out.miss_estimate.begin(), out.miss_estimate.end(), 0.0);
      std::fill(out.miss_half.begin(), out.miss_half.end(), 0.0);
      Rng rng(mix_seed(seed, 0xdef1ULL, (uint64_t)round));
      const int S = 4096;
      std::vector<int64_t> hits(s.N + 1, 0);
      for (int it = 0; it < S; ++it) {
        const Vec x = random_point(G, rng);
        const ClassifyResult cls = classify_S(s, r, lambda, field_pair(field, x));
        if (!cls) continue;
        bool inside = false;
        for (size_t c = 0; c < out.cells.size() && !inside; ++c)
          inside = out.label[c] == cls.i && out.cells[c].contains(x);
        if (!inside) ++hits[cls.i];
      }
      out.deficit = 0;
      for (int k = 1; k <= s.N; ++k) {
        const double ph = (double)hits[k] / S;
        out.miss_estimate[k] = ph * g_volume;
        out.miss_half[k] =
            3 * g_volume * std::sqrt(std::max(ph * (1 - ph), 1.0 / S) / S);
        const double denom = out.labeled_volume[k] + out.miss_estimate[k];
        if (denom > 0)
          out.deficit = std::max(out.deficit, out.miss_estimate[k] / denom);
      }
    }

    const bool budget_hit =
        out.cells.size() + (unresolved.size() << G.boxes[0].dim()) > cell_budget;
    if (unresolved.empty() || out.deficit <= deficit_target ||
        round >= max_rounds || budget_hit) {
      for (const Box& b : unresolved) {
        out.cells.push_back(b);
        out.label.push_back(0);
        out.labeled_volume[0] += b.volume();
      }
      break;
    }
    work.clear();
    for (const Box& b : unresolved) push_grid(b, 2, &work);
    ++round;
  }
  out.rounds = round;
  return out;
}

// ============================================================
// Reports
// ============================================================

BoundRow make_row(const std::string& name, double required, double achieved,
                  const std::string& sense, const std::string& method,
                  double half_width) {
  BoundRow r;
  r.name = name;
  r.required = required;
  r.achieved = achieved;
  r.sense = sense;
  r.method = method;
  r.half_width = half_width;
  if (sense == "<")
    r.pass = achieved < required;
  else if (sense == "<=")
    r.pass = achieved <= required;
  else
    r.pass = achieved >= required;
  return r;
}

std::string report_json(const StageReport& rep) {
  nlohmann::json j;
  j["params"] = {{"lambda", rep.params.lambda}, {"mu", rep.params.mu},
                 {"r", rep.params.r},           {"s", rep.params.s},
                 {"eps", rep.params.eps},       {"d_prime", rep.params.d_prime},
                 {"eps_prime", rep.params.eps_prime},
                 {"ell_prime", rep.params.ell_prime},
                 {"lipschitz", rep.params.lipschitz}};
  j["g_volume"] = rep.g_volume;
  j["f0_volume"] = rep.f0_volume;
  j["covered"] = rep.covered;
  j["pinned_total"] = rep.pinned_total;
  j["corner_mass"] = rep.corner_mass;
  j["graph_l1"] = rep.graph_l1;
  j["c0"] = {{"diam", rep.c0_diam}, {"ratio", rep.c0_ratio}, {"value", rep.c0}};
  j["cubes"] = rep.cube_count;
  nlohmann::json rows = nlohmann::json::object();
  for (const BoundRow& r : rep.rows) {
    nlohmann::json e = {{"required", r.required},
                        {"achieved", r.achieved},
                        {"sense", r.sense},
                        {"method", r.method},
                        {"pass", r.pass}};
    if (r.method == "mc") e["half_width"] = r.half_width;
    rows[r.name] = e;
  }
  j["rows"] = rows;
  j["all_pass"] = rep.all_pass;
  return j.dump(2);
}

// ============================================================
// One refinement pass
// ============================================================

StageResult run_stage(const Scenario& s, FieldTree field, const Domain& G,
                      double lambda, double mu, double r, double s_rad,
                      double eps, uint64_t seed) {
  if (field.base.m != s.m || field.base.n != s.n)
    throw precondition_error("run_stage: field shape does not match the scenario");
  validate_domain(G);

  StageReport rep;
  rep.params = stage_params(s, field, G, lambda, mu, r, s_rad, eps, seed);
  const StageParams& P = rep.params;
  rep.g_volume = G.volume();

  {
    Rng rng(mix_seed(seed, 0x9aeULL, 0));
    for (int it = 0; it < 256; ++it) {
      const Vec x = random_point(G, rng);
      if (!decompose_Sigma(s, r, lambda, field_pair(field, x)))
        throw precondition_error("run_stage: field value at x=" + str(x) +
                                 " does not decompose at radius " + str(r) +
                                 " and level " + str(lambda));
    }
  }

  const DomainLabels labels = classify_domain(
      s, field, G, r, lambda, 2, P.eps_prime, mix_seed(seed, 0xdccULL, 1));
  rep.f0_volume = labels.labeled_volume[0];

  const double radius_cap = 0.999 * std::min(P.ell_prime, eps);
  for (int k = 0; k <= s.N; ++k) {
    Domain part;
    for (size_t i = 0; i < labels.cells.size(); ++i)
      if (labels.label[i] == k) part.boxes.push_back(labels.cells[i]);
    if (part.boxes.empty()) continue;
    const CoverResult cov = vitali_cover(part, radius_cap, 1.0 - 1e-9, 48);
    if (!cov.ok)
      throw stage_bound_error("run_stage: cover of the label-" +
                              std::to_string(k) + " cells stopped at fill " +
                              str(cov.achieved));
    for (const Box& b : cov.boxes) {
      rep.cubes.push_back(b);
      rep.cube_label.push_back(k);
    }
    rep.covered += cov.covered;
  }
  rep.cube_count = (int)rep.cubes.size();

  const int64_t C = rep.cube_count;
  std::vector<FieldPatch> patches((size_t)C);
  std::vector<std::string> fail_msg((size_t)C);
  std::vector<int> fail_kind((size_t)C, -1);
  auto build_cube = [&](int64_t i) {
    try {
      const Box& cube = rep.cubes[(size_t)i];
      const int k = rep.cube_label[(size_t)i];
      const MatrixPair y = field_pair(field, cube.center);
      Decomposition dec;
      bool have = false;
      if (k > 0) {
        const ClassifyResult cls = classify_S(s, r, lambda, y);
        if (cls && cls.i == k) {
          dec.i = k;
          dec.lambda_prime = lambda;
          dec.q = 1;
          dec.rho = cls.rho;
          dec.rho_prime = MatrixPair::zero(s.m, s.n);
          dec.residual = cls.residual;
          have = true;
        }
      }
      if (!have) {
        const DecomposeResult dr = decompose_Sigma(s, r, lambda, y);
        if (!dr)
          throw precondition_error("cube center x=" + str(cube.center) +
                                   " does not decompose at radius " + str(r) +
                                   " and level " + str(lambda));
        dec = dr.witness;
      }
      SigmaStep step = step_in_sigma(s, dec, lambda, mu, r, cube, P.eps_prime);
      FieldPatch& p = patches[(size_t)i];
      p.cube = cube;
      p.label = k;
      p.witness = dec;
      p.start = step.y;
      p.sup_phi = step.sup_phi;
      p.measured = std::move(step.measured);
      p.pinned_zeta = std::move(step.pinned_zeta);
      p.pinned_pi = std::move(step.pinned_pi);
      p.node = std::move(step.node);
      p.tree = std::move(step.tree);
    } catch (const Error& e) {
      fail_msg[(size_t)i] = e.what();
      fail_kind[(size_t)i] = (int)e.kind;
    }
  };
  const int workers = run_workers();
  if (workers > 1) {
#ifdef WILDGRAD_HAVE_OPENMP
#pragma omp parallel for num_threads(workers) schedule(dynamic)
#endif
    for (int64_t i = 0; i < C; ++i) build_cube(i);
  } else {
    for (int64_t i = 0; i < C; ++i) build_cube(i);
  }
  for (int64_t i = 0; i < C; ++i)
    if (fail_kind[(size_t)i] >= 0)
      throw Error((Error::Kind)fail_kind[(size_t)i],
                  "run_stage: cube " + std::to_string(i) + ": " + fail_msg[(size_t)i]);

  rep.corner_mass.assign(s.N + 1, 0.0);
  double sup_all = 0, pinned_total = 0, min_cube_fraction = 1, max_radius = 0;
  double l1_sum = 0;
  for (int64_t i = 0; i < C; ++i) {
    const FieldPatch& p = patches[(size_t)i];
    max_radius = std::max(max_radius, p.cube.radius());
    sup_all = std::max(sup_all, p.sup_phi);
    const double vol = p.cube.volume();
    double cube_pinned = 0, cube_l1 = 0, max_offset = 0;
    for (int j = 0; j < s.N; ++j) {
      cube_pinned += p.measured[(size_t)j];
      rep.corner_mass[(size_t)j + 1] += p.measured[(size_t)j];
      double off = 0;
      if (!p.pinned_zeta.empty())
        off = std::max(off, frob(p.pinned_zeta[(size_t)j].first - p.start.first));
      if (!p.pinned_pi.empty())
        off = std::max(off, frob(p.pinned_pi[(size_t)j].first - p.start.first));
      cube_l1 += p.measured[(size_t)j] * off;
      max_offset = std::max(max_offset, off);
    }
    pinned_total += cube_pinned;
    min_cube_fraction = std::min(min_cube_fraction, cube_pinned / vol);
    cube_l1 += (vol - cube_pinned) * (max_offset + P.eps_prime);
    l1_sum += cube_l1;
  }
  rep.pinned_total = pinned_total;
  rep.graph_l1 = l1_sum;

  for (FieldPatch& p : patches) field.patches.push_back(std::move(p));

  // Sampled diameter of the level-1 blend set, for the recorded constant.
  {
    Rng rng(mix_seed(seed, 0xc0d1ULL, 2));
    std::vector<MatrixPair> pts;
    pts.reserve(512);
    for (int it = 0; it < 512; ++it) {
      const int i = 1 + (int)rng.below((uint64_t)s.N);
      const double lp = rng.uniform(s.delta2, 1.0);
      const double q = rng.uniform();
      MatrixPair rho = MatrixPair::zero(s.m, s.n);
      MatrixPair rho_p = MatrixPair::zero(s.m, s.n);
      for (int e = 0; e < rho.entries(); ++e) rho.flat(e) = rng.uniform(-1, 1);
      for (int e = 0; e < rho_p.entries(); ++e) rho_p.flat(e) = rng.uniform(-1, 1);
      const double nr = norm(rho), np = norm(rho_p);
      if (nr > 0) rho = (0.999 * s.r0 * rng.uniform() / nr) * rho;
      if (np > 0) rho_p = (0.999 * s.r0 * rng.uniform() / np) * rho_p;
      pts.push_back(q * zeta(s, i, lp, rho) + (1 - q) * anchor(s, i, rho_p));
    }
    for (size_t a = 0; a < pts.size(); ++a)
      for (size_t b = a + 1; b < pts.size(); ++b)
        rep.c0_diam = std::max(rep.c0_diam, dist(pts[a], pts[b]));
  }
  const double bracket = rep.f0_volume + (eps + (mu - lambda)) * rep.g_volume;
  rep.c0_ratio = bracket > 0 ? rep.graph_l1 / bracket : 0;
  rep.c0 = std::max(rep.c0_diam, rep.c0_ratio);

  // Sampled membership of the updated field one level up.
  double member_frac = 0;
  {
    Rng rng(mix_seed(seed, 0x3e3bULL, 3));
    const int S = 512;
    int okc = 0;
    for (int it = 0; it < S; ++it) {
      const Vec x = random_point(G, rng);
      if (decompose_Sigma(s, s_rad, mu, field_pair(field, x))) ++okc;
    }
    member_frac = (double)okc / S;
  }

  // The perturbation vanishes on the boundary of G.
  double boundary_worst = 0;
  {
    Rng rng(mix_seed(seed, 0xb0dULL, 4));
    for (int it = 0; it < 64; ++it) {
      const Box& b = G.boxes[rng.below(G.boxes.size())];
      const int axis = (int)rng.below((uint64_t)b.dim());
      const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      Vec x = rng.point_in(b);
      x[axis] = b.center[axis] + side * b.half[axis];
      const FieldValue fv = eval_field(field, x);
      const double dev = norm(fv.u - field.base.u(x)) +
                         frob(fv.du - field.base.du(x)) +
                         frob(fv.v - field.base.v(x));
      boundary_worst = std::max(boundary_worst, dev);
    }
  }

  // Finite-difference divergence of the stress rows, normalized so kinks
  // contribute at the step scale h rather than their slope.
  double div_worst = 0;
  {
    Rng rng(mix_seed(seed, 0xd117ULL, 5));
    const double h = 1e-7 * std::max(1.0, P.diam);
    for (int it = 0; it < 64; ++it) {
      const Vec x = random_point(G, rng);
      Vec divv(s.m);
      double local_scale = 0;
      for (int d = 0; d < s.n; ++d) {
        Vec xp = x, xm = x;
        xp[d] += h;
        xm[d] -= h;
        const FieldValue vp = eval_field(field, xp);
        const FieldValue vm = eval_field(field, xm);
        const double hh = xp[d] - xm[d];
        for (int i2 = 0; i2 < s.m; ++i2) {
          divv[i2] += (vp.v.at(i2, d) - vm.v.at(i2, d)) / hh;
          local_scale = std::max({local_scale, std::fabs(vp.v.at(i2, d)),
                                  std::fabs(vm.v.at(i2, d))});
        }
      }
      double raw = 0;
      for (int i2 = 0; i2 < s.m; ++i2) raw = std::max(raw, std::fabs(divv[i2]));
      div_worst = std::max(div_worst, raw * h / (1 + local_scale));
    }
  }

  rep.rows.push_back(make_row("cube-radius", std::min(P.ell_prime, eps),
                              max_radius, "<", "exact"));
  rep.rows.push_back(make_row("membership", 1.0, member_frac, ">=", "sampled"));
  rep.rows.push_back(make_row("linf-delta", eps, sup_all, "<", "exact"));
  rep.rows.push_back(make_row("pinned-cube-min", 1 - eps,
                              C ? min_cube_fraction : 1.0, ">=", "exact"));
  rep.rows.push_back(make_row("pinned-global", (1 - eps) * rep.g_volume,
                              pinned_total, ">=", "exact"));
  const double corner_floor = 0.5 * (mu - lambda) *
                              std::pow(mu - s.delta2, s.N - 1) * s.delta1 *
                              rep.g_volume;
  for (int k = 1; k <= s.N; ++k)
    rep.rows.push_back(make_row("corner-mass-" + std::to_string(k), corner_floor,
                                rep.corner_mass[(size_t)k], ">=", "exact"));
  for (int k = 1; k <= s.N; ++k) {
    const double miss = labels.miss_estimate[(size_t)k];
    const bool exact = miss <= 0;
    const double required =
        (lambda / mu) *
        (labels.labeled_volume[(size_t)k] + miss + (exact ? 0 : labels.miss_half[(size_t)k]));
    rep.rows.push_back(make_row("persistence-" + std::to_string(k), required,
                                rep.corner_mass[(size_t)k], ">=",
                                exact ? "exact" : "mc",
                                exact ? 0 : (lambda / mu) * labels.miss_half[(size_t)k]));
  }
  rep.rows.push_back(make_row("graph-l1", rep.c0 * bracket, rep.graph_l1, "<=", "exact"));
  rep.rows.push_back(make_row("boundary", 0.0, boundary_worst, "<=", "exact"));
  rep.rows.push_back(make_row("div-residual", 1e-6, div_worst, "<=", "sampled"));

  rep.all_pass = true;
  for (const BoundRow& row : rep.rows) rep.all_pass = rep.all_pass && row.pass;
  if (!rep.all_pass)
    for (const BoundRow& row : rep.rows)
      if (!row.pass)
        throw stage_bound_error("run_stage: bound '" + row.name + "' achieved " +
                                str(row.achieved) + " against required " +
                                str(row.required) + " (" + row.sense + ")");

  return StageResult{std::move(field), std::move(rep)};
}

}  // namespace wildgrad
