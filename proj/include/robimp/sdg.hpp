#pragma once

// Compilation of path-dependent SDE impulse games onto the lattice machinery:
// jumps enter through a sequential impulse operator, rewards through a
// left-endpoint Riemann sum plus a terminal payoff, and the uncertain
// classical control becomes the kernel menu of a moment-matched trinomial
// lattice.  A counter-mode Euler-Maruyama simulator provides independent
// Monte Carlo cross-checks and a paired-noise stability probe.

#include "extraction.hpp"
#include "rng.hpp"

namespace robimp {

// ---------------------------------------------------------------------------
// Discrete paths: a continuous part sampled on the grid plus dated jumps.
// The jump at time index j contributes to every value from j onwards.
// ---------------------------------------------------------------------------

struct DiscretePath {
  int dim = 1;
  std::vector<double> x;  // row-major continuous part, points * dim

  struct Jump {
    int time_index = 0;
    std::vector<double> dx;
  };
  std::vector<Jump> jumps;

  int points() const { return dim == 0 ? 0 : (int)(x.size() / (std::size_t)dim); }
  double base(int i, int c = 0) const { return x[(std::size_t)i * dim + c]; }

  double value(int i, int c = 0) const {
    double acc = base(i, c);
    for (const Jump& j : jumps)
      if (j.time_index <= i) acc += j.dx[c];
    return acc;
  }
};

inline DiscretePath discrete_from_view(const PathView& pv) {
  DiscretePath dp;
  dp.dim = pv.dim;
  dp.x.assign(pv.data, pv.data + (std::size_t)pv.points * pv.dim);
  return dp;
}

// ---------------------------------------------------------------------------
// The SDE instance.  All coefficient callbacks are progressive: they may read
// the path only up to the supplied time index, jumps included.
// ---------------------------------------------------------------------------

struct SdeInstance {
  int dim = 1;
  double T = 1.0;
  std::vector<double> x0;
  std::vector<std::vector<double>> a_disc;    // classical control menu
  std::vector<std::vector<double>> impulses;  // impulse menu

  double sigma_min = 0.0;  // certified bounds for the diffusion coefficient
  double sigma_max = 0.0;

  // sigma(t, path, i, a, out): per-component diffusion (diagonal)
  std::function<void(double, const DiscretePath&, int, const std::vector<double>&,
                     std::vector<double>&)>
      sigma;
  // gamma(t, path, i, beta, out): jump caused by impulse beta; the path shows
  // every earlier jump but not this one
  std::function<void(double, const DiscretePath&, int, const std::vector<double>&,
                     std::vector<double>&)>
      gamma;
  std::function<double(double, const DiscretePath&, int)> phi_run;  // running reward
  std::function<double(const DiscretePath&, int)> psi;              // terminal reward
  // ell(t, path, i, beta): intervention price at the pre-jump state
  std::function<double(double, const DiscretePath&, int, const std::vector<double>&)> ell;

  double delta = 1.0;  // certified lower bound on ell
  double C0 = 1.0;     // certified bound for the compiled |phi| and |cost|
};

// ---------------------------------------------------------------------------
// Impulse operator: applies the history's jumps in order; the j-th jump size
// is evaluated on the path carrying jumps 1..j-1.
// ---------------------------------------------------------------------------

inline DiscretePath impulse_operator(const SdeInstance& sde, const TimeGrid& grid,
                                     const DiscretePath& base, const InterventionHistory& v) {
  DiscretePath dp = base;
  std::vector<double> jump((std::size_t)sde.dim, 0.0);
  for (const InterventionEntry& e : v.entries) {
    if (e.impulse < 0 || e.impulse >= (int)sde.impulses.size())
      throw StructuralError("impulse_operator: impulse index out of range");
    if (e.time_index < 0 || e.time_index >= dp.points())
      throw StructuralError("impulse_operator: jump time outside the path");
    sde.gamma(grid.time(e.time_index), dp, e.time_index, sde.impulses[(std::size_t)e.impulse],
              jump);
    dp.jumps.push_back(DiscretePath::Jump{e.time_index, jump});
  }
  return dp;
}

// ---------------------------------------------------------------------------
// Reward compilation: terminal reward = left-endpoint Riemann sum of the
// running reward along the jumped path plus the terminal payoff; the
// intervention price is the running cost at the pre-jump state.
// ---------------------------------------------------------------------------

struct CompiledCosts {
  std::function<double(const PathView&, const InterventionHistory&)> phi;
  std::function<double(const PathView&, const InterventionHistory&)> cost;
};

inline CompiledCosts make_costs(const SdeInstance& sde, const TimeGrid& grid) {
  CompiledCosts out;
  out.phi = [sde, grid](const PathView& pv, const InterventionHistory& v) -> double {
    const DiscretePath dp = impulse_operator(sde, grid, discrete_from_view(pv), v);
    const int n = pv.points - 1;
    const double dt = grid.dt();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += sde.phi_run(grid.time(i), dp, i) * dt;
    return acc + sde.psi(dp, n);
  };
  out.cost = [sde, grid](const PathView& pv, const InterventionHistory& v) -> double {
    if (v.empty()) throw StructuralError("cost: history has no intervention to price");
    const InterventionEntry last = v.entries.back();
    InterventionHistory before;
    before.entries.assign(v.entries.begin(), v.entries.end() - 1);
    const DiscretePath dp = impulse_operator(sde, grid, discrete_from_view(pv), before);
    return sde.ell(grid.time(last.time_index), dp, last.time_index,
                   sde.impulses[(std::size_t)last.impulse]);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Trinomial compilation: branches move by {+h, 0, -h} with h = lambda *
// sigma_max * sqrt(dt); classical control value a maps to the kernel
// (p_a, 1 - 2 p_a, p_a) with p_a = sigma(..., a)^2 dt / (2 h^2), which
// matches mean 0 and variance sigma^2 dt exactly.  p_a > 1/2 is a CFL-type
// discretization failure.
// ---------------------------------------------------------------------------

inline ImpulseProblem build_lattice_problem(const SdeInstance& sde, const TimeGrid& grid,

                                            double lambda,
                                            std::uint64_t node_cap = kDefaultNodeCap) {
  if (sde.dim != 1)
    throw InvalidInstance("build_lattice_problem: only scalar diffusions compile to a lattice");
  if (grid.n < 1) throw InvalidInstance("build_lattice_problem: grid needs at least one step");
  if (!(sde.sigma_min > 0.0) || !(sde.sigma_max >= sde.sigma_min))
    throw InvalidInstance("build_lattice_problem: need 0 < sigma_min <= sigma_max");
  if (sde.a_disc.empty()) throw InvalidInstance("build_lattice_problem: empty control menu");
  if (!(lambda >= 1.0))
    throw DiscretizationError("build_lattice_problem: lambda < 1 forces p_a > 1/2");

  const double dt = grid.dt();
  const double h = lambda * sde.sigma_max * std::sqrt(dt);
  std::vector<std::vector<std::vector<double>>> incs(
      (std::size_t)grid.n, {{h}, {0.0}, {-h}});
  ImpulseProblem p;
  p.lattice = build_lattice(grid, 3, 1, sde.x0, incs, node_cap);
  p.impulses = sde.impulses;
  const CompiledCosts costs = make_costs(sde, grid);
  p.phi = costs.phi;
  p.cost = costs.cost;
  p.delta = sde.delta;
  p.C0 = sde.C0;

  const LatticeModel lattice = p.lattice;  // capture a copy for path rebuilds
  p.kernels = [sde, grid, lattice, h, dt](const NodeRef& nd, const InterventionHistory& v,
                                          KernelSet& out) {
    std::vector<double> buf;
    node_path(lattice, nd, buf);
    const DiscretePath dp =
        impulse_operator(sde, grid, discrete_from_view(view_of(buf, nd.depth + 1, 1)), v);
    out.kernels.assign(sde.a_disc.size(), Kernel(3, 0.0));
    std::vector<double> sig(1, 0.0);
    const double t = grid.time(nd.depth);
    for (std::size_t q = 0; q < sde.a_disc.size(); ++q) {
      sde.sigma(t, dp, nd.depth, sde.a_disc[q], sig);
      double pa = sig[0] * sig[0] * dt / (2.0 * h * h);
      if (pa > 0.5 + 1e-12)
        throw DiscretizationError("build_lattice_problem: p_a = " + std::to_string(pa) +
                                  " > 1/2 at " + detail::node_text(nd) + " control " +
                                  std::to_string(q));
      if (pa > 0.5) pa = 0.5;
      out.kernels[q][0] = pa;
      out.kernels[q][1] = 1.0 - 2.0 * pa;
      out.kernels[q][2] = pa;
    }
  };
  return p;
}

// Worst mean / variance mismatch of the compiled kernels over every reachable
// (node, history, control) triple up to budget k_max.
struct KernelMomentReport {
  double worst_mean = 0.0;
  double worst_variance_gap = 0.0;
  std::uint64_t kernels_checked = 0;
};

inline KernelMomentReport trinomial_moment_report(const SdeInstance& sde, const TimeGrid& grid,
                                                  const ImpulseProblem& p, int k_max) {
  KernelMomentReport rep;
  const LatticeModel& m = p.lattice;
  const double dt = grid.dt();
  KernelSet ks;
  std::vector<double> buf, sig(1, 0.0);
  for (int depth = 0; depth < m.grid.n; ++depth) {
    const std::vector<InterventionHistory> hists =
        enumerate_histories(std::min(depth, m.grid.n - 1), p.n_impulses(), k_max);
    for (std::uint64_t node = 0; node < m.nodes_at(depth); ++node) {
      const NodeRef nd{depth, node};
      node_path(m, nd, buf);
      for (const InterventionHistory& v : hists) {
        const DiscretePath dp =
            impulse_operator(sde, grid, discrete_from_view(view_of(buf, depth + 1, 1)), v);
        p.kernels(nd, v, ks);
        for (std::size_t q = 0; q < ks.kernels.size(); ++q) {
          sde.sigma(grid.time(depth), dp, depth, sde.a_disc[q], sig);
          const double target = sig[0] * sig[0] * dt;
          double mean = 0.0, second = 0.0;
          for (int b = 0; b < 3; ++b) {
            const double inc = m.increments[depth][b][0];
            mean += ks.kernels[q][b] * inc;
            second += ks.kernels[q][b] * inc * inc;
          }
          rep.worst_mean = std::max(rep.worst_mean, std::abs(mean));
          rep.worst_variance_gap =
              std::max(rep.worst_variance_gap, std::abs(second - mean * mean - target));
          ++rep.kernels_checked;
        }
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Euler-Maruyama simulation with counter-mode noise: the normal driving step
// i of path `path_id` is a pure function of (seed, path_id, i), so any thread
// schedule and any batching produce identical trajectories.
// ---------------------------------------------------------------------------

using SimImpulseRule =
    std::function<std::optional<int>(int, const DiscretePath&, const InterventionHistory&)>;
using SimClassicalRule =
    std::function<int(int, const DiscretePath&, const InterventionHistory&)>;

inline SimImpulseRule sim_wait_everywhere() {
  return [](int, const DiscretePath&, const InterventionHistory&) { return std::nullopt; };
}

inline SimClassicalRule sim_fixed_control(int a_index) {
  return [a_index](int, const DiscretePath&, const InterventionHistory&) { return a_index; };
}

struct SimResult {
  DiscretePath path;
  InterventionHistory hist;
  double cost = 0.0;
};

inline SimResult euler_simulate(const SdeInstance& sde, const TimeGrid& grid,
                                const SimImpulseRule& control, const SimClassicalRule& classical,
                                int budget, std::uint64_t seed, std::uint64_t path_id) {
  const int n = grid.n;
  const double dt = grid.dt();
  const double sq = std::sqrt(dt);
  const CounterRng rng(seed, path_id);

  SimResult res;
  res.path.dim = sde.dim;
  res.path.x.assign((std::size_t)(n + 1) * sde.dim, 0.0);
  for (int c = 0; c < sde.dim; ++c) res.path.x[c] = sde.x0[c];

  std::vector<double> sig((std::size_t)sde.dim, 0.0), jump((std::size_t)sde.dim, 0.0);
  // the rules may only look at the realised prefix; expose a trimmed view
  DiscretePath seen;
  seen.dim = sde.dim;
  for (int i = 0; i < n; ++i) {
    const double t = grid.time(i);
    seen.x.assign(res.path.x.begin(), res.path.x.begin() + (std::size_t)(i + 1) * sde.dim);
    seen.jumps = res.path.jumps;
    while (budget - res.hist.size() >= 1) {
      const std::optional<int> act = control(i, seen, res.hist);
      if (!act) break;
      if (*act < 0 || *act >= (int)sde.impulses.size())
        throw StructuralError("euler_simulate: impulse index out of range");
      res.cost += sde.ell(t, seen, i, sde.impulses[(std::size_t)*act]);
      sde.gamma(t, seen, i, sde.impulses[(std::size_t)*act], jump);
      seen.jumps.push_back(DiscretePath::Jump{i, jump});
      res.hist = with_entry(res.hist, i, *act);
    }
    res.path.jumps = seen.jumps;
    res.cost += sde.phi_run(t, seen, i) * dt;
    const int a = classical(i, seen, res.hist);
    if (a < 0 || a >= (int)sde.a_disc.size())
      throw StructuralError("euler_simulate: classical control index out of range");
    sde.sigma(t, seen, i, sde.a_disc[(std::size_t)a], sig);
    for (int c = 0; c < sde.dim; ++c)
      res.path.x[(std::size_t)(i + 1) * sde.dim + c] =
          res.path.x[(std::size_t)i * sde.dim + c] +
          sig[(std::size_t)c] * sq * rng.normal((std::uint64_t)i, (std::uint64_t)c);
  }
  res.cost += sde.psi(res.path, n);
  return res;
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation.  Paths are partitioned across threads; every
// per-path cost lands in its own slot and the reduction is sequential, so
// the report does not depend on the thread count.
// ---------------------------------------------------------------------------

struct McReport {
  double mean = 0.0;
  double se = 0.0;
  std::uint64_t n_paths = 0;
  std::uint64_t seed = 0;
};

inline McReport mc_evaluate(const SdeInstance& sde, const TimeGrid& grid,
                            const SimImpulseRule& control, const SimClassicalRule& classical,
                            int budget, std::uint64_t n_paths, std::uint64_t seed,
                            int threads = 1) {
  if (n_paths < 2) throw InvalidInstance("mc_evaluate: need at least two paths");
  std::vector<double> cost((std::size_t)n_paths, 0.0);
  const int workers = std::max(1, threads);
  auto run_block = [&](std::uint64_t lo, std::uint64_t hi) {
    for (std::uint64_t pid = lo; pid < hi; ++pid)
      cost[pid] = euler_simulate(sde, grid, control, classical, budget, seed, pid).cost;
  };
  if (workers == 1) {
    run_block(0, n_paths);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs((std::size_t)workers);
    const std::uint64_t chunk = (n_paths + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const std::uint64_t lo = std::min<std::uint64_t>(n_paths, (std::uint64_t)w * chunk);
      const std::uint64_t hi = std::min<std::uint64_t>(n_paths, lo + chunk);
      pool.emplace_back([&errs, &run_block, lo, hi, w]() {
        try {
          run_block(lo, hi);
        } catch (...) {
          errs[w] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errs)
      if (e) std::rethrow_exception(e);
  }
  McReport rep;
  rep.n_paths = n_paths;
  rep.seed = seed;
  double acc = 0.0;
  for (double cst : cost) acc += cst;
  rep.mean = acc / (double)n_paths;
  double ss = 0.0;
  for (double cst : cost) ss += (cst - rep.mean) * (cst - rep.mean);
  rep.se = std::sqrt(ss / (double)(n_paths - 1)) / std::sqrt((double)n_paths);
  return rep;
}

// ---------------------------------------------------------------------------
// Replaying lattice rules in simulation: a simulated path is matched to the
// lattice node whose per-step increments are nearest (ties to the smaller
// branch index), and the lattice rule is consulted there.
// ---------------------------------------------------------------------------

inline NodeRef quantize_to_node(const LatticeModel& m, const DiscretePath& dp, int upto) {
  NodeRef nd{0, 0};
  for (int j = 0; j < upto; ++j) {
    const double diff = dp.base(j + 1, 0) - dp.base(j, 0);
    int best = 0;
    double gap = std::abs(diff - m.increments[j][0][0]);
    for (int b = 1; b < m.branch_count; ++b) {
      const double g = std::abs(diff - m.increments[j][b][0]);
      if (g < gap) {
        gap = g;
        best = b;
      }
    }
    nd = child_of(nd, best, m.branch_count);
  }
  return nd;
}

inline SimImpulseRule sim_replay_control(const LatticeModel& lattice,
                                         const ImpulseControlRule& rule) {
  const LatticeModel* m = &lattice;
  const ImpulseControlRule* r = &rule;
  return [m, r](int i, const DiscretePath& dp,
                const InterventionHistory& v) -> std::optional<int> {
    return r->decide(quantize_to_node(*m, dp, i), v);
  };
}

inline SimClassicalRule sim_replay_strategy(const LatticeModel& lattice,
                                            const AdversaryStrategyRule& rule) {
  const LatticeModel* m = &lattice;
  const AdversaryStrategyRule* r = &rule;
  return [m, r](int i, const DiscretePath& dp, const InterventionHistory& v) -> int {
    return r->choose(quantize_to_node(*m, dp, i), v);
  };
}

// ---------------------------------------------------------------------------
// Stability probe: paired trajectories under common noise.  Input A freezes
// the given prefix and history v; input B freezes prefix + s * perturbation
// and shifts each intervention time toward its target in v_shift by the
// factor s.  The gap is the mean over paths of the sup of |A - B| at grid
// times outside the window spanned by the paired intervention times.
// ---------------------------------------------------------------------------

struct StabilityReport {
  std::vector<double> scales;
  std::vector<double> estimates;
  bool strictly_decreasing = false;
};

namespace detail {

inline DiscretePath simulate_frozen(const SdeInstance& sde, const TimeGrid& grid,
                                    const std::vector<double>& prefix,
                                    const InterventionHistory& v, int a_index,
                                    std::uint64_t seed, std::uint64_t path_id) {
  const int n = grid.n;
  const int frozen = (int)(prefix.size() / (std::size_t)sde.dim);  // points given
  if (frozen < 1 || frozen > n + 1)
    throw StructuralError("stability probe: prefix does not fit the grid");
  const double dt = grid.dt();
  const double sq = std::sqrt(dt);
  const CounterRng rng(seed, path_id);

  DiscretePath dp;
  dp.dim = sde.dim;
  dp.x.assign((std::size_t)(n + 1) * sde.dim, 0.0);
  std::copy(prefix.begin(), prefix.end(), dp.x.begin());
  // jumps of v are applied on top of the path as it is revealed
  DiscretePath seen;
  seen.dim = sde.dim;
  std::vector<double> sig((std::size_t)sde.dim, 0.0), jump((std::size_t)sde.dim, 0.0);
  InterventionHistory applied;
  std::size_t next_jump = 0;
  for (int i = 0; i < n; ++i) {
    seen.x.assign(dp.x.begin(), dp.x.begin() + (std::size_t)(i + 1) * sde.dim);
    while (next_jump < v.entries.size() && v.entries[next_jump].time_index == i) {
      const InterventionEntry e = v.entries[next_jump];
      sde.gamma(grid.time(i), seen, i, sde.impulses[(std::size_t)e.impulse], jump);
      seen.jumps.push_back(DiscretePath::Jump{i, jump});
      ++next_jump;
    }
    if (i + 1 < frozen) continue;  // prefix point already fixed
    sde.sigma(grid.time(i), seen, i, sde.a_disc[(std::size_t)a_index], sig);
    for (int c = 0; c < sde.dim; ++c)
      dp.x[(std::size_t)(i + 1) * sde.dim + c] =
          dp.x[(std::size_t)i * sde.dim + c] +
          sig[(std::size_t)c] * sq * rng.normal((std::uint64_t)i, (std::uint64_t)c);
  }
  seen.x = dp.x;
  while (next_jump < v.entries.size()) {
    const InterventionEntry e = v.entries[next_jump];
    sde.gamma(grid.time(e.time_index), seen, e.time_index,
              sde.impulses[(std::size_t)e.impulse], jump);
    seen.jumps.push_back(DiscretePath::Jump{e.time_index, jump});
    ++next_jump;
  }
  dp.jumps = seen.jumps;
  return dp;
}

}  // namespace detail

inline StabilityReport stability_probe(const SdeInstance& sde, const TimeGrid& grid,
                                       const std::vector<double>& prefix,
                                       const std::vector<double>& perturbation,
                                       const InterventionHistory& v,
                                       const std::vector<int>& v_shift_times,
                                       const std::vector<double>& scales, int a_index,
                                       std::uint64_t n_paths, std::uint64_t seed) {
  if (prefix.size() != perturbation.size())
    throw InvalidInstance("stability_probe: perturbation must match the prefix");
  if (v_shift_times.size() != v.entries.size())
    throw InvalidInstance("stability_probe: need one shifted time per intervention");
  StabilityReport rep;
  rep.scales = scales;
  for (const double s : scales) {
    // scaled inputs for trajectory B
    std::vector<double> prefix_b(prefix.size());
    for (std::size_t j = 0; j < prefix.size(); ++j)
      prefix_b[j] = prefix[j] + s * perturbation[j];
    InterventionHistory vb;
    for (std::size_t j = 0; j < v.entries.size(); ++j) {
      const double t = (1.0 - s) * v.entries[j].time_index + s * v_shift_times[j];
      int ti = (int)std::llround(t);
      ti = std::max(0, std::min(grid.n - 1, ti));
      if (!vb.entries.empty()) ti = std::max(ti, vb.entries.back().time_index);
      vb.entries.push_back(InterventionEntry{ti, v.entries[j].impulse});
    }
    // grid indices covered by the paired intervention windows
    std::vector<char> masked((std::size_t)grid.n + 1, 0);
    for (std::size_t j = 0; j < v.entries.size(); ++j) {
      const int lo = std::min(v.entries[j].time_index, vb.entries[j].time_index);
      const int hi = std::max(v.entries[j].time_index, vb.entries[j].time_index);
      for (int i = lo; i < hi; ++i) masked[(std::size_t)i] = 1;
    }
    double acc = 0.0;
    for (std::uint64_t pid = 0; pid < n_paths; ++pid) {
      const DiscretePath pa =
          detail::simulate_frozen(sde, grid, prefix, v, a_index, seed, pid);
      const DiscretePath pb =
          detail::simulate_frozen(sde, grid, prefix_b, vb, a_index, seed, pid);
      double sup = 0.0;
      for (int i = 0; i <= grid.n; ++i) {
        if (masked[(std::size_t)i]) continue;
        for (int c = 0; c < sde.dim; ++c)
          sup = std::max(sup, std::abs(pa.value(i, c) - pb.value(i, c)));
      }
      acc += sup;
    }
    rep.estimates.push_back(acc / (double)n_paths);
  }
  rep.strictly_decreasing = true;
  for (std::size_t j = 1; j < rep.estimates.size(); ++j)
    if (!(rep.estimates[j] < rep.estimates[j - 1])) rep.strictly_decreasing = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Refinement diagnostics: root values across successive grid refinements;
// consecutive gaps should not grow (slack factor applied by the caller).
// ---------------------------------------------------------------------------

struct RefinementReport {
  std::vector<int> ns;
  std::vector<double> roots;
  std::vector<double> gaps;  // |roots[i] - roots[i+1]|
};

inline RefinementReport refinement_report(const SdeInstance& sde, double lambda, int k,
                                          const std::vector<int>& ns, int threads = 1,
                                          std::uint64_t node_cap = kDefaultNodeCap) {
  RefinementReport rep;
  rep.ns = ns;
  for (const int n : ns) {
    const ImpulseProblem p =
        build_lattice_problem(sde, TimeGrid{n, sde.T}, lambda, node_cap);
    rep.roots.push_back(root_value_streaming(p, k, threads));
  }
  for (std::size_t j = 0; j + 1 < rep.roots.size(); ++j)
    rep.gaps.push_back(std::abs(rep.roots[j] - rep.roots[j + 1]));
  return rep;
}

}  // namespace robimp
