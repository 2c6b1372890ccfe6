#include "wildgrad/staircase.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "wildgrad/core.hpp"
#include "wildgrad/rng.hpp"

namespace wildgrad {

namespace {

/// Cyclic corner index folded into 1..N.
int cyc(int k, int N) {
  const int r = k % N;
  return r <= 0 ? r + N : r;
}

bool full_region(const SlabRegion& r) { return norm(r.a) == 0; }

HostSet single_host(const Box& cell) {
  HostSet h;
  h.cell = cell;
  h.count = 1;
  h.hosted = cell.volume();
  h.fill = 1;
  return h;
}

Box inset(const Box& b, double factor) {
  Vec half = b.half;
  for (int d = 0; d < b.dim(); ++d) half[d] *= factor;
  return Box(b.center, half);
}

/// Interior point of a plateau region, or nothing when rejection sampling
/// keeps missing (slanted regions only; the other shapes are direct).
std::optional<Vec> sample_region_point(const SlabRegion& r, Rng& rng) {
  if (r.intervals.empty() || !(r.measure > 0)) return std::nullopt;
  if (full_region(r)) return rng.point_in(inset(r.inner, 0.99));
  if (r.axis >= 0) {
    Vec x = rng.point_in(inset(r.inner, 0.99));
    const auto& iv = r.intervals[(size_t)rng.below(r.intervals.size())];
    const double u = iv.first + (0.05 + 0.9 * rng.uniform()) * (iv.second - iv.first);
    const double k = double((int64_t)rng.below((uint64_t)r.ell));
    x[r.axis] = (r.phase0 + r.delta * (k + u)) / r.a[r.axis];
    if (!r.inner.contains(x)) return std::nullopt;
    return x;
  }
  for (int t = 0; t < 4000; ++t) {
    Vec x = rng.point_in(inset(r.inner, 0.99));
    const double u = slab_phase(r.a, r.phase0, r.delta, x);
    for (const auto& iv : r.intervals) {
      const double pad = 0.05 * (iv.second - iv.first);
      if (u >= iv.first + pad && u <= iv.second - pad) return x;
    }
  }
  return std::nullopt;
}

/// Uniform grid of cubes classified strictly inside a slanted region,
/// halved until the kept volume reaches fill_min of the region measure.
void refine_grid(const SlabRegion& region, double fill_min, int64_t budget, HostSet& h) {
  const int n = region.inner.dim();

  // Fold the phase anchor into the window intervals so the classifier sees
  // the same set as region_contains, inset slightly so kept cells clear the
  // window boundaries.
  const double base_phase = slab_phase(region.a, region.phase0, region.delta, Vec(n));
  const double shift = base_phase == 0 ? 0.0 : 1.0 - base_phase;
  IntervalSet shifted;
  double len_min = 1;
  for (const auto& iv : region.intervals) {
    const double len = iv.second - iv.first;
    len_min = std::min(len_min, len);
    const double pad = std::min(1e-9, 1e-3 * len);
    double lo = iv.first + pad + shift;
    double hi = iv.second - pad + shift;
    if (lo >= 1) {
      lo -= 1;
      hi -= 1;
    }
    if (hi <= 1) {
      shifted.push_back({lo, hi});
    } else {
      shifted.push_back({lo, 1.0});
      shifted.push_back({0.0, hi - 1});
    }
  }
  const auto classify = slab_classifier(region.a, region.delta, shifted);

  double a_sum = 0;
  for (int d = 0; d < n; ++d) a_sum += std::fabs(region.a[d]);
  double side = 0.5 * len_min * region.delta / a_sum;
  const Vec lo = region.inner.lo();
  const Vec hi = region.inner.hi();
  const int64_t scan_cap = int64_t(1) << 24;

  for (int attempt = 0;; ++attempt) {
    std::array<int64_t, max_dim> counts{};
    double scan = 1;
    for (int d = 0; d < n; ++d) {
      counts[(size_t)d] = std::max<int64_t>(1, (int64_t)std::floor((hi[d] - lo[d]) / side));
      scan *= double(counts[(size_t)d]);
    }
    if (!(scan <= double(scan_cap)))
      throw internal_error("refine_hosts: a grid of about " + str(scan) +
                           " cells is needed to cover the region, beyond the scan cap");
    const int64_t total = (int64_t)scan;

    std::vector<std::array<int32_t, max_dim>> kept;
    for (int64_t flat = 0; flat < total; ++flat) {
      int64_t rem = flat;
      Vec c(n);
      std::array<int32_t, max_dim> idx{};
      for (int d = 0; d < n; ++d) {
        const int64_t k = rem % counts[(size_t)d];
        rem /= counts[(size_t)d];
        idx[(size_t)d] = (int32_t)k;
        c[d] = lo[d] + (double(k) + 0.5) * side;
      }
      if (classify(Box::cube(c, 0.5 * side)) > 0) {
        kept.push_back(idx);
        if ((int64_t)kept.size() > budget)
          throw internal_error("refine_hosts: more than " + std::to_string(budget) +
                               " host cells would be kept, beyond the budget");
      }
    }

    double cell_vol = 1;
    for (int d = 0; d < n; ++d) cell_vol *= side;
    const double fill = double(kept.size()) * cell_vol / region.measure;
    if (!kept.empty() && fill + 1e-12 >= fill_min) {
      std::sort(kept.begin(), kept.end());
      const std::array<int32_t, max_dim> base = kept.front();
      Vec center(n), half(n), pitch(n);
      for (int d = 0; d < n; ++d) {
        center[d] = lo[d] + (double(base[(size_t)d]) + 0.5) * side;
        half[d] = 0.5 * side;
        pitch[d] = side;
      }
      for (auto& cell : kept)
        for (int d = 0; d < n; ++d) cell[(size_t)d] -= base[(size_t)d];
      h.cell = Box(center, half);
      h.count = (int64_t)kept.size();
      h.pitch = pitch;
      h.lattice = std::move(kept);
      return;
    }
    if (attempt >= 6)
      throw internal_error("refine_hosts: grid fill " + str(fill) +
                           " stayed below the target " + str(fill_min) +
                           " at the finest affordable grid");
    side *= 0.5;
  }
}

// ============================================================
// Gap cache
// ============================================================

/// Sampled interior gap of the membership sets, reused across steps of the
/// same scenario at the same radius and level.
double gap_accuracy(const Scenario& s, double r, double mu) {
  static std::map<std::tuple<std::string, double, double>, double> cache;
  static std::mutex guard;
  const std::lock_guard<std::mutex> lock(guard);
  const auto key = std::make_tuple(s.name, r, mu);
  const auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const GapEstimates gaps = set_gaps(s, 0.5 * r, r, mu, 128, 0x5e7ca11u);
  cache.emplace(key, gaps.d_prime);
  return gaps.d_prime;
}

// ============================================================
// Wave extraction
// ============================================================

/// Factor a pair difference into a single wave: p and a from the dominant
/// rank-one part of the gradient slot, B as the flux slot projected onto
/// the kernel of a. Rejects gradient slots that are not rank one.
WaveVector extract_wave(const MatrixPair& g) {
  const Mat& U = g.first;
  const Mat& V = g.second;
  const int m = U.m, n = U.n;
  const double u_norm = frob(U);
  if (!(u_norm > 0)) throw precondition_error("extract_wave: zero gradient slot");

  Vec a(n);
  {
    int heavy = 0;
    double best = -1;
    for (int d = 0; d < n; ++d) {
      double w = 0;
      for (int i = 0; i < m; ++i) w += U.at(i, d) * U.at(i, d);
      if (w > best) {
        best = w;
        heavy = d;
      }
    }
    a[heavy] = 1;
  }
  for (int it = 0; it < 200; ++it) {
    const Vec b = mat_vec(U, a);
    Vec next(n);
    for (int d = 0; d < n; ++d) {
      double s = 0;
      for (int i = 0; i < m; ++i) s += U.at(i, d) * b[i];
      next[d] = s;
    }
    const double len = norm(next);
    if (!(len > 0)) break;
    a = (1.0 / len) * next;
  }
  const Vec p = mat_vec(U, a);
  const double residual = frob(U - tensor_product(p, a));
  if (!(residual <= 1e-8 * (1 + u_norm)))
    throw precondition_error("extract_wave: gradient slot is " + str(residual) +
                             " from rank one, not a single wave");
  const Vec va = mat_vec(V, a);
  WaveVector wave;
  wave.p = p;
  wave.a = a;
  wave.B = V - tensor_product(va, a);
  validate_wave(wave, "extract_wave");
  return wave;
}

// ============================================================
// Chains
// ============================================================

struct ChainLevel {
  std::string stage;
  int corner = 0;      // corner the rising plateau pins
  MatrixPair entry;    // field value the block starts from
  HostSet hosts;       // placement inside the previous falling plateau
  BuildingBlock block;
  double instances = 1;
};

/// Split block, then rounds of descending peels, each depth hosted inside
/// the falling plateau of the previous one. Axis and trivial plateaus tile
/// exactly, so their blocks keep the full per-depth accuracy; slanted
/// plateaus pay half of it to the grid cover.
std::vector<ChainLevel> build_chain(const TNConfig& cfg, const StaircasePlan& plan,
                                    const Box& box, const MatrixPair& eta) {
  const int N = cfg.N();
  std::vector<ChainLevel> chain;
  chain.reserve((size_t)plan.depths);

  ChainLevel split;
  split.stage = "split";
  split.corner = plan.i;
  split.entry = eta;
  split.hosts = single_host(box);
  split.block =
      make_block(cfg.gamma(plan.i).scaled(cfg.kappa(plan.i)), plan.lambda, box, plan.eps);
  chain.push_back(std::move(split));
  if (plan.lambda == 1) return chain;

  for (int round = 1; round <= plan.rounds; ++round)
    for (int j = 1; j <= N; ++j) {
      const int c = cyc(plan.i - j, N);
      const ChainLevel& prev = chain.back();
      const SlabRegion& parent = prev.block.gsecond;
      const bool exact = parent.axis >= 0 || full_region(parent);
      const double eps = exact ? plan.eps : 0.5 * plan.eps;
      ChainLevel level;
      level.stage = "round " + std::to_string(round) + " peel " + std::to_string(c);
      level.corner = c;
      level.entry = prev.entry + parent.value;
      level.hosts = refine_hosts(parent, (1 - plan.eps) / (1 - eps));
      level.instances = prev.instances * double(level.hosts.count);
      level.block = make_block(cfg.gamma(c).scaled(cfg.kappa(c)), cfg.chi(c), level.hosts.cell, eps);
      chain.push_back(std::move(level));
    }
  return chain;
}

PerturbNode chain_to_node(const std::vector<ChainLevel>& chain) {
  std::unique_ptr<PerturbNode> tail;
  for (size_t level = chain.size(); level-- > 1;) {
    auto node = std::make_unique<PerturbNode>();
    node->block = chain[level].block;
    node->hosts = chain[level].hosts;
    node->instances = chain[level].instances;
    node->on_second = std::move(tail);
    tail = std::move(node);
  }
  PerturbNode root;
  root.block = chain[0].block;
  root.hosts = chain[0].hosts;
  root.instances = chain[0].instances;
  root.on_second = std::move(tail);
  return root;
}

std::vector<RegionNode> chain_to_regions(const std::vector<ChainLevel>& chain) {
  std::vector<RegionNode> below;
  for (size_t level = chain.size(); level-- > 0;) {
    const ChainLevel& cl = chain[level];
    std::vector<RegionNode> here;
    if (cl.block.gprime.measure > 0) {
      RegionNode leaf;
      leaf.stage = cl.stage;
      leaf.corner = cl.corner;
      leaf.value = cl.entry + cl.block.gprime.value;
      leaf.region = cl.block.gprime;
      leaf.instances = cl.instances;
      leaf.measure = cl.instances * cl.block.gprime.measure;
      here.push_back(std::move(leaf));
    }
    if (cl.block.gsecond.measure > 0) {
      RegionNode rest;
      rest.stage = cl.stage;
      rest.corner = 0;
      rest.value = cl.entry + cl.block.gsecond.value;
      rest.region = cl.block.gsecond;
      rest.instances = cl.instances;
      rest.measure = cl.instances * cl.block.gsecond.measure;
      rest.children = std::move(below);
      here.push_back(std::move(rest));
    } else if (!below.empty()) {
      throw internal_error("staircase region assembly lost a depth");
    }
    below = std::move(here);
  }
  return below;
}

/// Walk one random instance path per depth and compare every leaf plateau
/// against the entry value accumulated from the actual block values.
void pin_walk(const PerturbNode& node, const PerturbNode& root, const MatrixPair& base,
              const MatrixPair& entry, const Vec& shift, Rng& rng, const char* who) {
  auto check = [&](const SlabRegion& region) {
    if (!(region.measure > 0)) return;
    const auto point = sample_region_point(region, rng);
    if (!point)
      throw internal_error(std::string(who) + ": could not sample a plateau interior point");
    const Vec x = *point + shift;
    const BlockEval ev = eval_perturbation(root, x);
    const MatrixPair got(base.first + ev.dphi, base.second + ev.psi);
    const MatrixPair want = entry + region.value;
    const double err = dist(got, want);
    if (!(err <= 1e-10 * (1 + norm(want))))
      throw internal_error(std::string(who) + ": plateau value at a sampled point drifted " +
                           str(err) + " from its pinned label");
  };
  if (node.on_prime) {
    const int64_t t = (int64_t)rng.below((uint64_t)node.on_prime->hosts.count);
    pin_walk(*node.on_prime, root, base, entry + node.block.gprime.value,
             shift + host_offset(node.on_prime->hosts, t), rng, who);
  } else {
    check(node.block.gprime);
  }
  if (node.on_second) {
    const int64_t t = (int64_t)rng.below((uint64_t)node.on_second->hosts.count);
    pin_walk(*node.on_second, root, base, entry + node.block.gsecond.value,
             shift + host_offset(node.on_second->hosts, t), rng, who);
  } else {
    check(node.block.gsecond);
  }
}

void scale_instances(PerturbNode& node, double factor) {
  node.instances *= factor;
  if (node.on_prime) scale_instances(*node.on_prime, factor);
  if (node.on_second) scale_instances(*node.on_second, factor);
}

/// Copy of a region subtree with values shifted onto a new base point,
/// instance counts scaled by the number of host cells, and stages prefixed
/// by the side they serve.
std::vector<RegionNode> rebased(const std::vector<RegionNode>& nodes, const MatrixPair& offset,
                                double factor, const std::string& prefix) {
  std::vector<RegionNode> out;
  out.reserve(nodes.size());
  for (const RegionNode& node : nodes) {
    RegionNode copy;
    copy.stage = prefix + node.stage;
    copy.corner = node.corner;
    copy.value = node.value + offset;
    copy.region = node.region;
    copy.instances = node.instances * factor;
    copy.measure = node.measure * factor;
    copy.mc_half = node.mc_half * factor;
    copy.children = rebased(node.children, offset, factor, prefix);
    out.push_back(std::move(copy));
  }
  return out;
}

template <class F>
void visit_regions(const std::vector<RegionNode>& nodes, const F& f) {
  for (const RegionNode& node : nodes) {
    f(node);
    visit_regions(node.children, f);
  }
}

}  // namespace

// ============================================================
// Host sets
// ============================================================

Vec host_offset(const HostSet& h, int64_t t) {
  if (t < 0 || t >= h.count) throw internal_error("host_offset: instance index out of range");
  Vec offset(h.cell.dim());
  if (h.axis >= 0) {
    offset[h.axis] = double(t) * h.step;
  } else if (!h.lattice.empty()) {
    for (int d = 0; d < h.cell.dim(); ++d)
      offset[d] = double(h.lattice[(size_t)t][(size_t)d]) * h.pitch[d];
  }
  return offset;
}

int64_t host_locate(const HostSet& h, const Vec& x) {
  if (h.count <= 0) return -1;
  int64_t t = 0;
  if (h.axis >= 0) {
    const double k = std::round((x[h.axis] - h.cell.center[h.axis]) / h.step);
    if (!(k >= 0 && k < double(h.count))) return -1;
    t = (int64_t)k;
  } else if (!h.lattice.empty()) {
    std::array<int32_t, max_dim> key{};
    for (int d = 0; d < h.cell.dim(); ++d) {
      const double lo = h.cell.center[d] - h.cell.half[d];
      const double k = std::floor((x[d] - lo) / h.pitch[d]);
      if (!(k >= -2147483648.0 && k <= 2147483647.0)) return -1;
      key[(size_t)d] = (int32_t)k;
    }
    const auto it = std::lower_bound(h.lattice.begin(), h.lattice.end(), key);
    if (it == h.lattice.end() || *it != key) return -1;
    t = it - h.lattice.begin();
  }
  const Vec offset = host_offset(h, t);
  for (int d = 0; d < h.cell.dim(); ++d)
    if (!(std::fabs(x[d] - offset[d] - h.cell.center[d]) < h.cell.half[d])) return -1;
  return t;
}

HostSet refine_hosts(const SlabRegion& region, double fill_min, int64_t budget) {
  HostSet h;
  if (region.intervals.empty() || !(region.measure > 0)) return h;

  if (full_region(region)) {
    h.cell = region.inner;
    h.count = 1;
  } else if (region.axis >= 0) {
    if (region.intervals.size() != 1)
      throw internal_error("refine_hosts: expected a single plateau window per period");
    const std::vector<Box> cells = slab_components(region);
    if (cells.empty()) throw internal_error("refine_hosts: axis region has no window cells");
    h.cell = cells.front();
    h.count = (int64_t)cells.size();
    h.axis = region.axis;
    h.step = region.delta / region.a[region.axis];
  } else {
    refine_grid(region, fill_min, budget, h);
  }

  h.hosted = double(h.count) * h.cell.volume();
  h.fill = h.hosted / region.measure;
  if (!(h.fill + 1e-9 >= fill_min))
    throw internal_error("refine_hosts: hosted fill " + str(h.fill) +
                         " fell short of the target " + str(fill_min));
  return h;
}

// ============================================================
// Perturbation towers
// ============================================================

BlockEval eval_perturbation(const PerturbNode& root, const Vec& x) {
  const int m = root.block.gamma.p.n;
  const int n = root.block.gamma.a.n;
  BlockEval acc{Vec(m), Mat(m, n), Mat(m, n)};
  const PerturbNode* node = &root;
  Vec local = x;
  while (node) {
    const BlockEval ev = eval_block(node->block, local);
    acc.phi = acc.phi + ev.phi;
    acc.dphi = acc.dphi + ev.dphi;
    acc.psi = acc.psi + ev.psi;
    const PerturbNode* next = nullptr;
    for (const PerturbNode* child : {node->on_prime.get(), node->on_second.get()}) {
      if (!child) continue;
      const int64_t t = host_locate(child->hosts, local);
      if (t < 0) continue;
      local = local - host_offset(child->hosts, t);
      next = child;
      break;
    }
    if (!next) {
      for (const PerturbGraft& g : node->grafts) {
        const int64_t t = host_locate(g.hosts, local);
        if (t < 0) continue;
        local = local - host_offset(g.hosts, t) - g.shift;
        next = g.body.get();
        break;
      }
    }
    node = next;
  }
  return acc;
}

double perturb_sup_phi(const PerturbNode& root) {
  double nested = root.on_prime ? perturb_sup_phi(*root.on_prime) : 0;
  if (root.on_second) nested = std::max(nested, perturb_sup_phi(*root.on_second));
  for (const PerturbGraft& g : root.grafts)
    nested = std::max(nested, perturb_sup_phi(*g.body));
  return root.block.sup_phi + nested;
}

// ============================================================
// Region trees
// ============================================================

double RegionTree::corner_measure(int j) const {
  double total = 0;
  visit_regions(nodes, [&](const RegionNode& node) {
    if (node.corner == j) total += node.measure;
  });
  return total;
}

double RegionTree::labeled_measure() const {
  double total = 0;
  visit_regions(nodes, [&](const RegionNode& node) {
    if (node.corner != 0) total += node.measure;
  });
  return total;
}

std::vector<const RegionNode*> RegionTree::labeled(int j) const {
  std::vector<const RegionNode*> out;
  visit_regions(nodes, [&](const RegionNode& node) {
    if (node.corner == j) out.push_back(&node);
  });
  return out;
}

// ============================================================
// Corner staircases
// ============================================================

StaircasePlan plan_staircase(const TNConfig& cfg, int i, double lambda, double delta) {
  const int N = cfg.N();
  if (i < 1 || i > N)
    throw precondition_error("plan_staircase: corner index " + std::to_string(i) +
                             " out of range 1.." + std::to_string(N));
  if (!(lambda >= 0 && lambda <= 1))
    throw precondition_error("plan_staircase: lambda " + str(lambda) + " outside [0, 1]");
  if (!(delta > 0 && delta < 1))
    throw precondition_error("plan_staircase: delta " + str(delta) + " outside (0, 1)");

  StaircasePlan plan;
  plan.i = i;
  plan.lambda = lambda;
  plan.delta = delta;
  double tau = 1;
  for (int k = 1; k <= N; ++k) tau *= 1 - cfg.chi(k);
  plan.tau = tau;

  const double root = std::sqrt(1 - delta);
  if (lambda == 1) {
    plan.rounds = 0;
    plan.depths = 1;
  } else {
    double remainder = tau;
    int rounds = 1;
    while (remainder > 1 - root) {
      remainder *= tau;
      if (++rounds > 100000)
        throw stage_bound_error("plan_staircase: the per-round remainder " + str(tau) +
                                " shrinks too slowly to reach delta = " + str(delta));
    }
    plan.rounds = rounds;
    plan.depths = 1 + rounds * N;
  }

  double eps = 0.5;
  while (!(double(plan.depths) * eps < delta &&
           std::pow(1 - eps, double(plan.depths)) >= root)) {
    eps *= 0.5;
    if (eps < 1e-12)
      throw stage_bound_error("plan_staircase: no workable per-depth accuracy below delta = " +
                              str(delta));
  }
  plan.eps = eps;
  return plan;
}

CornerOscillation oscillate_to_corners(const TNConfig& cfg, int i, double lambda,
                                       const Box& box, double delta) {
  const int N = cfg.N();
  if (box.dim() != cfg.gamma(1).a.n)
    throw precondition_error("oscillate_to_corners: box dimension " +
                             std::to_string(box.dim()) +
                             " does not match the wave directions");

  CornerOscillation out;
  out.plan = plan_staircase(cfg, i, lambda, delta);
  out.eta = lambda * cfg.xi(i) + (1 - lambda) * cfg.pi(i);

  const std::vector<ChainLevel> chain = build_chain(cfg, out.plan, box, out.eta);
  out.node = chain_to_node(chain);
  out.tree.root = box;
  out.tree.nodes = chain_to_regions(chain);

  // Exact pinned measures against the barycentric floors.
  const std::vector<double> weights = corner_weights(cfg, i, lambda);
  const double vol = box.volume();
  out.measured.assign((size_t)N, 0.0);
  out.required.assign((size_t)N, 0.0);
  for (int j = 1; j <= N; ++j)
    out.required[(size_t)j - 1] = (1 - delta) * weights[(size_t)j - 1] * vol;
  for (const ChainLevel& cl : chain)
    if (cl.block.gprime.measure > 0)
      out.measured[(size_t)cl.corner - 1] += cl.instances * cl.block.gprime.measure;

  double pinned = 0;
  for (int j = 1; j <= N; ++j) {
    pinned += out.measured[(size_t)j - 1];
    if (!(out.measured[(size_t)j - 1] >= out.required[(size_t)j - 1]))
      throw internal_error("oscillate_to_corners: pinned measure " +
                           str(out.measured[(size_t)j - 1]) + " at corner " + std::to_string(j) +
                           " fell below its floor " + str(out.required[(size_t)j - 1]));
  }
  if (!(pinned >= (1 - delta) * vol))
    throw internal_error("oscillate_to_corners: total pinned measure " + str(pinned) +
                         " fell below (1-delta)|box| = " + str((1 - delta) * vol));

  // Each leaf label must land on its corner, and the final falling plateau
  // back on the start anchor.
  for (const ChainLevel& cl : chain) {
    if (!(cl.block.gprime.measure > 0)) continue;
    const MatrixPair label = cl.entry + cl.block.gprime.value;
    const double err = dist(label, cfg.xi(cl.corner));
    if (!(err <= 1e-9 * (1 + norm(cfg.xi(cl.corner)))))
      throw internal_error("oscillate_to_corners: leaf label strayed " + str(err) +
                           " from corner " + std::to_string(cl.corner));
  }
  if (lambda < 1) {
    const ChainLevel& last = chain.back();
    const MatrixPair residual = last.entry + last.block.gsecond.value;
    const double err = dist(residual, cfg.pi(i));
    if (!(err <= 1e-9 * (1 + norm(cfg.pi(i)))))
      throw internal_error("oscillate_to_corners: residual label strayed " + str(err) +
                           " from its anchor");
  }

  out.sup_phi = perturb_sup_phi(out.node);
  if (!(out.sup_phi < delta))
    throw internal_error("oscillate_to_corners: sup|phi| bound " + str(out.sup_phi) +
                         " reached delta = " + str(delta));

  // Sampled containment in the delta-neighborhood of the corner segments.
  Rng rng(mix_seed(0x0cca51a1ULL, (uint64_t)i, (uint64_t)out.plan.depths));
  for (int t = 0; t < 256; ++t) {
    const Vec x = rng.point_in(box);
    const BlockEval ev = eval_perturbation(out.node, x);
    const MatrixPair val(out.eta.first + ev.dphi, out.eta.second + ev.psi);
    const double d = tn_distance(cfg, val);
    if (!(d < delta))
      throw internal_error("oscillate_to_corners: sampled value sits " + str(d) +
                           " from the corner segments, beyond delta = " + str(delta));
    if (!(norm_inf(ev.phi) <= out.sup_phi * (1 + 1e-12)))
      throw internal_error("oscillate_to_corners: sampled |phi| exceeded its bound " +
                           str(out.sup_phi));
  }
  for (int pass = 0; pass < 8; ++pass)
    pin_walk(out.node, out.node, out.eta, out.eta, Vec(box.dim()), rng, "oscillate_to_corners");
  return out;
}

// ============================================================
// Membership steps
// ============================================================

SigmaStep step_in_sigma(const Scenario& s, const Decomposition& dec, double lambda,
                        double mu, double r, const Box& box, double tau) {
  const int N = s.N;
  if (dec.i < 1 || dec.i > N)
    throw precondition_error("step_in_sigma: branch index " + std::to_string(dec.i) +
                             " out of range 1.." + std::to_string(N));
  if (!(r > 0 && r <= s.r0))
    throw precondition_error("step_in_sigma: radius " + str(r) + " outside (0, " + str(s.r0) +
                             "]");
  if (!(tau > 0 && tau < 1))
    throw precondition_error("step_in_sigma: tau " + str(tau) + " outside (0, 1)");
  if (!(dec.q >= 0 && dec.q <= 1))
    throw precondition_error("step_in_sigma: mixture weight " + str(dec.q) + " outside [0, 1]");
  if (!(dec.lambda_prime >= s.delta2 && dec.lambda_prime <= lambda && lambda <= mu && mu < 1))
    throw precondition_error("step_in_sigma: need delta2 <= lambda' <= lambda <= mu < 1, got "
                             "lambda' = " +
                             str(dec.lambda_prime) + ", lambda = " + str(lambda) +
                             ", mu = " + str(mu));
  if (box.dim() != s.n)
    throw precondition_error("step_in_sigma: box dimension " + std::to_string(box.dim()) +
                             " does not match the scenario");
  if (!(norm(dec.rho) < r && norm(dec.rho_prime) < r))
    throw precondition_error(
        "step_in_sigma: endpoint parameters must lie strictly inside the radius-" + str(r) +
        " ball");
  for (const MatrixPair* rho : {&dec.rho, &dec.rho_prime})
    for (double kj : s.kappa_map(*rho))
      if (!(mu * kj > 1 + 1e-9))
        throw precondition_error("step_in_sigma: mu kappa = " + str(mu * kj) +
                                 " leaves no room above 1; mu is too small for this parameter");

  const MatrixPair moving = zeta(s, dec.i, dec.lambda_prime, dec.rho);
  const MatrixPair fixed = anchor(s, dec.i, dec.rho_prime);
  const MatrixPair seg = moving - fixed;
  const double cone = wave_cone_residual(seg.first, seg.second);
  if (!(cone <= 1e-8 * (1 + norm(seg))))
    throw precondition_error("step_in_sigma: endpoint difference sits " + str(cone) +
                             " off the wave cone; the decomposition does not reconstruct");

  SigmaStep out;
  out.y = dec.q * moving + (1 - dec.q) * fixed;
  const double gap = gap_accuracy(s, r, mu);
  out.delta = 0.75 * std::min({gap, 0.5 * tau, 1 - std::sqrt(1 - tau)});
  if (!(out.delta > 0))
    throw internal_error("step_in_sigma: accuracy collapsed to " + str(out.delta) +
                         "; the sampled set gap is degenerate");

  // Sub-configurations at level mu: same anchors and directions, ratios
  // scaled so the peel mixtures become 1/(mu kappa).
  const auto scaled_kappas = [&](const MatrixPair& rho) {
    std::vector<double> ks = s.kappa_map(rho);
    for (double& k : ks) k *= mu;
    return ks;
  };
  const TNConfig cfg_moving = build_tn(dec.rho, s.gamma_map(dec.rho), scaled_kappas(dec.rho));
  const TNConfig cfg_fixed =
      build_tn(dec.rho_prime, s.gamma_map(dec.rho_prime), scaled_kappas(dec.rho_prime));
  const double lam_osc = std::min(1.0, dec.lambda_prime / mu);

  const WaveVector wave = extract_wave(seg);
  const double recon = dist(MatrixPair(tensor_product(wave.p, wave.a), wave.B), seg);
  int nonzero = 0;
  for (int d = 0; d < s.n; ++d)
    if (wave.a[d] != 0) ++nonzero;
  const double eps_split = (dec.q == 0 || dec.q == 1 || nonzero == 1) ? out.delta : 0.5 * out.delta;
  const BuildingBlock split = make_block(wave, dec.q, box, eps_split);
  const double fill_min = (1 - out.delta) / (1 - eps_split);

  std::optional<CornerOscillation> tower_moving, tower_fixed;
  HostSet hosts_moving, hosts_fixed;
  if (split.gprime.measure > 0) {
    hosts_moving = refine_hosts(split.gprime, fill_min);
    tower_moving.emplace(
        oscillate_to_corners(cfg_moving, dec.i, lam_osc, hosts_moving.cell, out.delta));
  }
  if (split.gsecond.measure > 0) {
    hosts_fixed = refine_hosts(split.gsecond, fill_min);
    tower_fixed.emplace(oscillate_to_corners(cfg_fixed, dec.i, 0.0, hosts_fixed.cell, out.delta));
  }

  // Mixture floors from both endpoint families.
  const std::vector<double> w_moving = corner_weights(cfg_moving, dec.i, lam_osc);
  const std::vector<double> w_fixed = corner_weights(cfg_fixed, dec.i, 0.0);
  const double vol = box.volume();
  out.measured.assign((size_t)N, 0.0);
  out.required.assign((size_t)N, 0.0);
  for (int j = 0; j < N; ++j)
    out.required[(size_t)j] =
        (1 - tau) * (dec.q * w_moving[(size_t)j] + (1 - dec.q) * w_fixed[(size_t)j]) * vol;
  if (tower_moving)
    for (int j = 0; j < N; ++j)
      out.measured[(size_t)j] += double(hosts_moving.count) * tower_moving->measured[(size_t)j];
  if (tower_fixed)
    for (int j = 0; j < N; ++j)
      out.measured[(size_t)j] += double(hosts_fixed.count) * tower_fixed->measured[(size_t)j];
  double pinned = 0;
  for (int j = 0; j < N; ++j) {
    pinned += out.measured[(size_t)j];
    if (!(out.measured[(size_t)j] >= out.required[(size_t)j]))
      throw internal_error("step_in_sigma: pinned measure " + str(out.measured[(size_t)j]) +
                           " at corner " + std::to_string(j + 1) + " fell below its floor " +
                           str(out.required[(size_t)j]));
  }
  if (!(pinned >= (1 - tau) * vol))
    throw internal_error("step_in_sigma: total pinned measure " + str(pinned) +
                         " fell below (1-tau)|box| = " + str((1 - tau) * vol));

  // Ideal endpoint families, checked against the scaled corners and for
  // branch membership at the new level.
  if (tower_moving) {
    for (int j = 1; j <= N; ++j) out.pinned_zeta.push_back(zeta(s, j, mu, dec.rho));
    for (int j = 1; j <= N; ++j) {
      const double err = dist(cfg_moving.xi(j), out.pinned_zeta[(size_t)j - 1]);
      if (!(err <= 1e-9 * (1 + norm(out.pinned_zeta[(size_t)j - 1]))))
        throw internal_error("step_in_sigma: scaled corner " + std::to_string(j) +
                             " missed its level-mu image by " + str(err));
    }
  }
  if (tower_fixed) {
    for (int j = 1; j <= N; ++j) out.pinned_pi.push_back(zeta(s, j, mu, dec.rho_prime));
    for (int j = 1; j <= N; ++j) {
      const double err = dist(cfg_fixed.xi(j), out.pinned_pi[(size_t)j - 1]);
      if (!(err <= 1e-9 * (1 + norm(out.pinned_pi[(size_t)j - 1]))))
        throw internal_error("step_in_sigma: scaled anchor-side corner " + std::to_string(j) +
                             " missed its level-mu image by " + str(err));
    }
  }
  for (const auto* family : {&out.pinned_zeta, &out.pinned_pi}) {
    for (size_t j = 0; j < family->size(); ++j) {
      const ClassifyResult cls = classify_S(s, r, mu, (*family)[j]);
      if (!cls || cls.i != (int)j + 1)
        throw internal_error("step_in_sigma: pinned value at corner " + std::to_string(j + 1) +
                             " failed branch membership at level mu");
    }
  }

  // Assemble the tree: split plateaus host the rebased towers, with values
  // shifted onto the actual reconstruction so labels describe what was
  // built rather than the ideal chain.
  out.tree.root = box;
  if (tower_moving) {
    const MatrixPair offset = (out.y + split.gprime.value) - tower_moving->eta;
    RegionNode host;
    host.stage = "step split";
    host.corner = 0;
    host.value = out.y + split.gprime.value;
    host.region = split.gprime;
    host.instances = 1;
    host.measure = split.gprime.measure;
    host.children =
        rebased(tower_moving->tree.nodes, offset, double(hosts_moving.count), "zeta ");
    out.tree.nodes.push_back(std::move(host));
  }
  if (tower_fixed) {
    const MatrixPair offset = (out.y + split.gsecond.value) - tower_fixed->eta;
    RegionNode host;
    host.stage = "step split";
    host.corner = 0;
    host.value = out.y + split.gsecond.value;
    host.region = split.gsecond;
    host.instances = 1;
    host.measure = split.gsecond.measure;
    host.children = rebased(tower_fixed->tree.nodes, offset, double(hosts_fixed.count), "pi ");
    out.tree.nodes.push_back(std::move(host));
  }

  out.node.block = split;
  out.node.hosts = single_host(box);
  out.node.instances = 1;
  if (tower_moving) {
    auto child = std::make_unique<PerturbNode>(std::move(tower_moving->node));
    child->hosts = hosts_moving;
    scale_instances(*child, double(hosts_moving.count));
    out.node.on_prime = std::move(child);
  }
  if (tower_fixed) {
    auto child = std::make_unique<PerturbNode>(std::move(tower_fixed->node));
    child->hosts = hosts_fixed;
    scale_instances(*child, double(hosts_fixed.count));
    out.node.on_second = std::move(child);
  }

  out.sup_phi = perturb_sup_phi(out.node);
  if (!(out.sup_phi < tau))
    throw internal_error("step_in_sigma: sup|phi| bound " + str(out.sup_phi) +
                         " reached tau = " + str(tau));

  // Every sampled perturbed value must decompose at the new level, and the
  // pinned plateaus must match the value chain of the actual blocks.
  Rng rng(mix_seed(0x57a9e511ULL, (uint64_t)dec.i, (uint64_t)std::llround(dec.q * (1 << 20))));
  for (int t = 0; t < 96; ++t) {
    const Vec x = rng.point_in(box);
    const BlockEval ev = eval_perturbation(out.node, x);
    const MatrixPair val(out.y.first + ev.dphi, out.y.second + ev.psi);
    const DecomposeResult dr = decompose_Sigma(s, r, mu, val);
    if (!dr.found)
      throw internal_error("step_in_sigma: a sampled value failed to decompose at level mu, "
                           "best residual " +
                           str(dr.best_residual));
    if (!(norm_inf(ev.phi) <= out.sup_phi * (1 + 1e-12)))
      throw internal_error("step_in_sigma: sampled |phi| exceeded its bound " + str(out.sup_phi));
  }
  for (int pass = 0; pass < 8; ++pass)
    pin_walk(out.node, out.node, out.y, out.y, Vec(box.dim()), rng, "step_in_sigma");

  // Labeled regions against the ideal images, within the reconstruction
  // slack of the witness.
  const double slack = recon + std::fabs(dec.residual);
  for (int j = 1; j <= N; ++j) {
    for (const RegionNode* node : out.tree.labeled(j)) {
      const bool moving_side = node->stage.rfind("zeta ", 0) == 0;
      const MatrixPair& ideal =
          moving_side ? out.pinned_zeta[(size_t)j - 1] : out.pinned_pi[(size_t)j - 1];
      const double tol = std::max(1e-8 * (1 + norm(ideal)), 10 * slack);
      const double err = dist(node->value, ideal);
      if (!(err <= tol))
        throw internal_error("step_in_sigma: labeled region value strayed " + str(err) +
                             " from its level-mu image at corner " + std::to_string(j));
    }
  }
  return out;
}

}  // namespace wildgrad
