#pragma once

// Seeded in-memory instances for the test suite.  Everything is derived from
// mix64 hashes of (seed, node, history), so a (shape, seed) pair pins the
// instance exactly: increments, per-state kernel sets, rewards, and prices.

#include <robimp/core.hpp>
#include <robimp/rng.hpp>

namespace gen {

using namespace robimp;

struct GenCfg {
  int n = 2;
  int branch_count = 2;
  int max_kernels = 2;   // kernel-set size varies per state in 1..max_kernels
  int n_impulses = 1;
  double delta = 1.0;
  double c0 = 3.0;
  std::uint64_t seed = 1;
  bool fixed_kernel_count = false;  // use exactly max_kernels everywhere
};

inline double unit_from(std::uint64_t h) { return bits_to_unit(h); }

inline std::uint64_t hash_path(std::uint64_t h, const PathView& pv) {
  for (int i = 0; i < pv.points; ++i)
    for (int c = 0; c < pv.dim; ++c) {
      std::uint64_t bits;
      const double v = pv.at(i, c);
      std::memcpy(&bits, &v, sizeof(bits));
      h = hash_combine(h, bits);
    }
  return h;
}

inline std::uint64_t hash_hist(std::uint64_t h, const InterventionHistory& v) {
  h = hash_combine(h, (std::uint64_t)v.size());
  for (const InterventionEntry& e : v.entries)
    h = hash_combine(hash_combine(h, (std::uint64_t)e.time_index), (std::uint64_t)e.impulse);
  return h;
}

inline ImpulseProblem make_problem(const GenCfg& cfg) {
  const std::uint64_t root_seed = mix64(cfg.seed ^ 0x696e7374ULL);

  std::vector<std::vector<std::vector<double>>> incs(
      (std::size_t)cfg.n,
      std::vector<std::vector<double>>((std::size_t)cfg.branch_count, {0.0}));
  for (int s = 0; s < cfg.n; ++s)
    for (int b = 0; b < cfg.branch_count; ++b) {
      const std::uint64_t h =
          hash_combine(hash_combine(root_seed, (std::uint64_t)s), (std::uint64_t)(b + 1));
      incs[(std::size_t)s][(std::size_t)b][0] = 2.4 * unit_from(h) - 1.2;
    }

  ImpulseProblem p;
  p.lattice = build_lattice(TimeGrid{cfg.n, 1.0}, cfg.branch_count, 1, {0.0}, incs);
  for (int u = 0; u < cfg.n_impulses; ++u) {
    const std::uint64_t h = hash_combine(root_seed, 0x626574ULL + (std::uint64_t)u);
    p.impulses.push_back({(unit_from(h) - 0.5) * 3.0});
  }
  p.delta = cfg.delta;
  p.C0 = cfg.c0;

  const int branch_count = cfg.branch_count;
  const int max_kernels = cfg.max_kernels;
  const bool fixed = cfg.fixed_kernel_count;
  p.kernels = [root_seed, branch_count, max_kernels, fixed](
                  const NodeRef& nd, const InterventionHistory& v, KernelSet& out) {
    std::uint64_t h = hash_combine(root_seed, 0x6b6572ULL);
    h = hash_combine(hash_combine(h, (std::uint64_t)nd.depth), nd.index);
    h = hash_hist(h, v);
    const int count = fixed ? max_kernels : 1 + (int)(mix64(h) % (std::uint64_t)max_kernels);
    out.kernels.assign((std::size_t)count, Kernel((std::size_t)branch_count, 0.0));
    for (int q = 0; q < count; ++q) {
      double sum = 0.0;
      for (int b = 0; b < branch_count; ++b) {
        const double w =
            0.05 + unit_from(hash_combine(h, (std::uint64_t)(q * branch_count + b + 1)));
        out.kernels[(std::size_t)q][(std::size_t)b] = w;
        sum += w;
      }
      for (int b = 0; b < branch_count; ++b) out.kernels[(std::size_t)q][(std::size_t)b] /= sum;
    }
  };

  const double c0 = cfg.c0;
  p.phi = [root_seed, c0](const PathView& pv, const InterventionHistory& v) {
    std::uint64_t h = hash_combine(root_seed, 0x706869ULL);
    h = hash_path(h, pv);
    h = hash_hist(h, v);
    return (2.0 * unit_from(h) - 1.0) * 0.9 * c0;
  };
  const double delta = cfg.delta;
  p.cost = [root_seed, delta, c0](const PathView& pv, const InterventionHistory& v) {
    std::uint64_t h = hash_combine(root_seed, 0x636f7374ULL);
    h = hash_path(h, pv);
    h = hash_hist(h, v);
    const double hi = std::min(c0, delta + 2.0);
    return delta + (hi - delta) * unit_from(h);
  };
  return p;
}

// the frozen two-branch single-step instance with one cheap intervention
inline ImpulseProblem make_t1() {
  ImpulseProblem p;
  p.lattice =
      build_lattice(TimeGrid{1, 1.0}, 2, 1, {0.0}, {{{1.0}, {-1.0}}});
  p.impulses = {{-2.0}};
  p.kernels = constant_kernels({{0.5, 0.5}, {0.9, 0.1}});
  p.phi = [](const PathView& pv, const InterventionHistory& v) {
    return pv.terminal(0) + (v.empty() ? 0.0 : -2.0);
  };
  p.cost = [](const PathView&, const InterventionHistory&) { return 1.0; };
  p.delta = 1.0;
  p.C0 = 3.0;
  return p;
}

// shapes for exhaustive game-value certification; every draw respects
// n <= 2, branch_count <= 2, kernels <= 2, impulses <= 2, budget <= 2 while
// keeping the strategy space under the enumeration caps
struct GameShape {
  GenCfg cfg;
  int k = 1;
};

inline std::vector<GameShape> game_shapes() {
  std::vector<GameShape> shapes;
  auto add = [&shapes](int n, int kernels, int impulses, int k, bool fixed) {
    GenCfg cfg;
    cfg.n = n;
    cfg.branch_count = 2;
    cfg.max_kernels = kernels;
    cfg.n_impulses = impulses;
    cfg.fixed_kernel_count = fixed;
    shapes.push_back(GameShape{cfg, k});
  };
  add(1, 2, 2, 2, true);   // deep repeats on a single step
  add(2, 2, 1, 1, true);   // two steps, one shot
  add(2, 2, 2, 1, true);   // double impulse menu
  add(2, 2, 1, 2, true);   // two shots, single mark
  add(2, 1, 2, 2, true);   // classical kernels, rich control side
  add(1, 2, 2, 1, true);   // single step, everything else maximal
  return shapes;
}

}  // namespace gen
