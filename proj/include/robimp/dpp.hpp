#pragma once

// Truncated dynamic programming for the impulse game.  The value recursion is
//
//   W(leaf, v)    = phi(path, v)
//   W(node, v)    = min( min_b [ W(node, v + (t_i, b)) + cost(prefix, v + (t_i, b)) ],
//                        max_kernel E[ W(child, v) ] )
//
// with the obstacle branch available only while the remaining budget is
// positive.  Repeated interventions at one time index recurse at the same
// node with a longer history, so the remaining budget at (node, v) is always
// root_budget - |v| and fields are keyed by (node, history) alone.

#include <memory>
#include <thread>
#include <unordered_map>

#include "expectation.hpp"

namespace robimp {

constexpr std::uint64_t kDefaultEntryCap = 10'000'000;
constexpr double kResidualTol = 1e-12;

// ---------------------------------------------------------------------------
// Value field: every reachable (node, history) pair of a solve, with the
// root budget recorded.  Exports and scans use a deterministic ordering.
// ---------------------------------------------------------------------------

class ValueField {
 public:
  int budget = 0;
  std::unordered_map<std::string, double> table;

  struct Entry {
    NodeRef node;
    InterventionHistory hist;
    double value = 0.0;
  };

  std::optional<double> find(const NodeRef& nd, const InterventionHistory& v) const {
    auto it = table.find(state_key(nd, v));
    if (it == table.end()) return std::nullopt;
    return it->second;
  }

  double at(const NodeRef& nd, const InterventionHistory& v) const {
    auto it = table.find(state_key(nd, v));
    if (it == table.end())
      throw InvalidInstance("value field has no entry at " + detail::node_text(nd) +
                            " history " + detail::hist_text(v));
    return it->second;
  }

  double root() const { return at(NodeRef{0, 0}, InterventionHistory{}); }

  std::vector<Entry> sorted_entries() const {
    std::vector<Entry> out;
    out.reserve(table.size());
    for (const auto& kv : table) {
      Entry e;
      decode_state_key(kv.first, e.node, e.hist);
      e.value = kv.second;
      out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) {
      if (a.node.depth != b.node.depth) return a.node.depth < b.node.depth;
      if (a.node.index != b.node.index) return a.node.index < b.node.index;
      if (a.hist.entries.size() != b.hist.entries.size())
        return a.hist.entries.size() < b.hist.entries.size();
      for (std::size_t j = 0; j < a.hist.entries.size(); ++j) {
        const InterventionEntry& x = a.hist.entries[j];
        const InterventionEntry& y = b.hist.entries[j];
        if (x.time_index != y.time_index) return x.time_index < y.time_index;
        if (x.impulse != y.impulse) return x.impulse < y.impulse;
      }
      return false;
    });
    return out;
  }
};

// ---------------------------------------------------------------------------
// Solver internals shared by the memoised and the streaming route.  Both run
// the identical operation sequence, so their results agree bitwise.
// ---------------------------------------------------------------------------

namespace detail {

struct SolveScratch {
  std::vector<double> path;                  // flat (n+1) x dim buffer
  std::vector<KernelSet> kernels;            // one per recursion level
  std::vector<std::vector<double>> child;    // child values per recursion level

  void init(const LatticeModel& m, int k0) {
    path.assign((std::size_t)(m.grid.n + 1) * m.dim, 0.0);
    for (int c = 0; c < m.dim; ++c) path[c] = m.origin[c];
    kernels.assign((std::size_t)(m.grid.n + k0 + 1), KernelSet{});
    child.assign((std::size_t)(m.grid.n + k0 + 1), {});
  }
};

struct SolveCtx {
  const ImpulseProblem* p = nullptr;
  int k0 = 0;
  std::uint64_t entry_cap = kDefaultEntryCap;
  std::unordered_map<std::string, double>* table = nullptr;  // null => streaming
  SolveScratch scratch;
};

inline double solve_rec(SolveCtx& c, const NodeRef& nd, const InterventionHistory& v) {
  std::string key;
  if (c.table) {
    key = state_key(nd, v);
    auto it = c.table->find(key);
    if (it != c.table->end()) return it->second;
  }
  const LatticeModel& m = c.p->lattice;
  const int depth = nd.depth;
  double val;
  if (depth == m.grid.n) {
    val = c.p->phi(view_of(c.scratch.path, depth + 1, m.dim), v);
  } else {
    const std::size_t level = (std::size_t)(depth + v.size());
    std::vector<double>& child = c.scratch.child[level];
    child.assign((std::size_t)m.branch_count, 0.0);
    for (int b = 0; b < m.branch_count; ++b) {
      const std::vector<double>& inc = m.increments[depth][b];
      for (int comp = 0; comp < m.dim; ++comp)
        c.scratch.path[(std::size_t)(depth + 1) * m.dim + comp] =
            c.scratch.path[(std::size_t)depth * m.dim + comp] + inc[comp];
      child[b] = solve_rec(c, child_of(nd, b, m.branch_count), v);
    }
    KernelSet& ks = c.scratch.kernels[level];
    c.p->kernels(nd, v, ks);
    const double cont =
        one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
    val = cont;
    if (c.k0 - v.size() >= 1 && c.p->n_impulses() > 0) {
      double obs = std::numeric_limits<double>::infinity();
      for (int b = 0; b < c.p->n_impulses(); ++b) {
        const InterventionHistory v2 = with_entry(v, depth, b);
        const double price = c.p->cost(view_of(c.scratch.path, depth + 1, m.dim), v2);
        const double tot = solve_rec(c, nd, v2) + price;
        if (tot < obs) obs = tot;
      }
      val = std::min(obs, cont);
    }
  }
  if (c.table) {
    c.table->emplace(std::move(key), val);
    if (c.table->size() > c.entry_cap)
      throw InstanceTooLarge("solve_truncated: memo table exceeds cap of " +
                             std::to_string(c.entry_cap));
  }
  return val;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Memoised top-down solve with budget k; materialises the full value field.
// ---------------------------------------------------------------------------

inline ValueField solve_truncated(const ImpulseProblem& p, int k,
                                  std::uint64_t entry_cap = kDefaultEntryCap) {
  if (k < 0) throw StructuralError("solve_truncated: negative budget");
  if (p.lattice.grid.n > 200 || p.n_impulses() > 255)
    throw InstanceTooLarge("solve_truncated: depth or impulse menu too large for key encoding");
  ValueField field;
  field.budget = k;
  detail::SolveCtx ctx;
  ctx.p = &p;
  ctx.k0 = k;
  ctx.entry_cap = entry_cap;
  ctx.table = &field.table;
  ctx.scratch.init(p.lattice, k);
  detail::solve_rec(ctx, NodeRef{0, 0}, InterventionHistory{});
  return field;
}

// ---------------------------------------------------------------------------
// Streaming root value: the same recursion without a memo table, for lattices
// too large to materialise.  With threads > 1 the root's child subtrees are
// evaluated concurrently; the per-subtree work is independent and the final
// combination is sequential, so the result is identical for every thread
// count.
// ---------------------------------------------------------------------------

inline double root_value_streaming(const ImpulseProblem& p, int k, int threads = 1) {
  if (k < 0) throw StructuralError("root_value_streaming: negative budget");
  const LatticeModel& m = p.lattice;
  if (m.grid.n == 0) {
    detail::SolveCtx ctx;
    ctx.p = &p;
    ctx.k0 = k;
    ctx.scratch.init(m, k);
    return detail::solve_rec(ctx, NodeRef{0, 0}, InterventionHistory{});
  }

  // root-level histories (all interventions at time index 0), longest first
  std::vector<InterventionHistory> root_hists = enumerate_histories(0, p.n_impulses(), k);
  std::sort(root_hists.begin(), root_hists.end(),
            [](const InterventionHistory& a, const InterventionHistory& b) {
              return a.size() > b.size();
            });

  // child subtree values for every root history, one task per child
  std::vector<std::vector<double>> child_vals((std::size_t)m.branch_count);
  auto run_child = [&](int b) {
    detail::SolveCtx ctx;
    ctx.p = &p;
    ctx.k0 = k;
    ctx.scratch.init(m, k);
    const std::vector<double>& inc = m.increments[0][b];
    for (int comp = 0; comp < m.dim; ++comp)
      ctx.scratch.path[(std::size_t)m.dim + comp] = ctx.scratch.path[comp] + inc[comp];
    std::vector<double>& out = child_vals[b];
    out.assign(root_hists.size(), 0.0);
    const NodeRef child = child_of(NodeRef{0, 0}, b, m.branch_count);
    for (std::size_t h = 0; h < root_hists.size(); ++h)
      out[h] = detail::solve_rec(ctx, child, root_hists[h]);
  };
  if (threads > 1 && m.branch_count > 1) {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs((std::size_t)m.branch_count);
    for (int b = 0; b < m.branch_count; ++b)
      pool.emplace_back([&, b]() {
        try {
          run_child(b);
        } catch (...) {
          errs[b] = std::current_exception();
        }
      });
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errs)
      if (e) std::rethrow_exception(e);
  } else {
    for (int b = 0; b < m.branch_count; ++b) run_child(b);
  }

  // combine at the root, longest histories first so the obstacle entries of
  // shorter ones are already available
  std::unordered_map<std::string, double> w;
  std::vector<double> path(m.origin);
  const PathView prefix = view_of(path, 1, m.dim);
  KernelSet ks;
  std::vector<double> child((std::size_t)m.branch_count);
  const NodeRef root{0, 0};
  for (std::size_t h = 0; h < root_hists.size(); ++h) {
    const InterventionHistory& v = root_hists[h];
    for (int b = 0; b < m.branch_count; ++b) child[b] = child_vals[b][h];
    p.kernels(root, v, ks);
    const double cont = one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
    double val = cont;
    if (k - v.size() >= 1 && p.n_impulses() > 0) {
      double obs = std::numeric_limits<double>::infinity();
      for (int b = 0; b < p.n_impulses(); ++b) {
        const InterventionHistory v2 = with_entry(v, 0, b);
        const double price = p.cost(prefix, v2);
        const double tot = w.at(state_key(root, v2)) + price;
        if (tot < obs) obs = tot;
      }
      val = std::min(obs, cont);
    }
    w[state_key(root, v)] = val;
  }
  return w.at(state_key(root, InterventionHistory{}));
}

// ---------------------------------------------------------------------------
// Intervention obstacle read off a solved field.
// ---------------------------------------------------------------------------

struct ObstacleChoice {
  double value = 0.0;
  int impulse = 0;
};

inline std::optional<ObstacleChoice> intervention_obstacle(const ImpulseProblem& p,
                                                           const ValueField& field,
                                                           const NodeRef& nd,
                                                           const InterventionHistory& v) {
  if (field.budget - v.size() < 1 || p.n_impulses() == 0) return std::nullopt;
  if (nd.depth >= p.lattice.grid.n + 1)
    throw StructuralError("intervention_obstacle: node beyond the terminal slice");
  std::vector<double> path;
  node_path(p.lattice, nd, path);
  const PathView prefix = view_of(path, nd.depth + 1, p.lattice.dim);
  double best = std::numeric_limits<double>::infinity();
  int best_b = 0;
  for (int b = 0; b < p.n_impulses(); ++b) {
    const InterventionHistory v2 = with_entry(v, nd.depth, b);
    const double tot = field.at(nd, v2) + p.cost(prefix, v2);
    if (tot < best) {
      best = tot;
      best_b = b;
    }
  }
  return ObstacleChoice{best, best_b};
}

// ---------------------------------------------------------------------------
// One-step consistency residual over a whole field: every interior entry is
// recomputed from its children / obstacle entries, every leaf entry against
// the terminal reward.  A correct field scores 0; a single edited entry of
// size eps scores at least eps.
// ---------------------------------------------------------------------------

inline double dpp_residual(const ImpulseProblem& p, const ValueField& field) {
  const LatticeModel& m = p.lattice;
  double worst = 0.0;
  std::vector<double> path;
  KernelSet ks;
  std::vector<double> child((std::size_t)std::max(m.branch_count, 1));
  for (const ValueField::Entry& e : field.sorted_entries()) {
    node_path(m, e.node, path);
    double recomputed;
    if (e.node.depth == m.grid.n) {
      recomputed = p.phi(view_of(path, e.node.depth + 1, m.dim), e.hist);
    } else {
      for (int b = 0; b < m.branch_count; ++b)
        child[b] = field.at(child_of(e.node, b, m.branch_count), e.hist);
      p.kernels(e.node, e.hist, ks);
      const double cont =
          one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
      recomputed = cont;
      if (field.budget - e.hist.size() >= 1 && p.n_impulses() > 0) {
        const PathView prefix = view_of(path, e.node.depth + 1, m.dim);
        double obs = std::numeric_limits<double>::infinity();
        for (int b = 0; b < p.n_impulses(); ++b) {
          const InterventionHistory v2 = with_entry(e.hist, e.node.depth, b);
          const double tot = field.at(e.node, v2) + p.cost(prefix, v2);
          if (tot < obs) obs = tot;
        }
        recomputed = std::min(obs, cont);
      }
    }
    worst = std::max(worst, std::abs(e.value - recomputed));
  }
  return worst;
}

// Multi-step (stopping form) consistency at a fixed history: the field values
// along v_base must coincide with the optimal-stopping value of the obstacle
// process built from the field's own intervention obstacles.
inline double dpp_stopping_form_residual(const ImpulseProblem& p, const ValueField& field,
                                         const InterventionHistory& v_base) {
  const LatticeModel& m = p.lattice;
  if (!v_base.empty() && v_base.last_time() > 0)
    throw StructuralError("dpp_stopping_form_residual: base history must be rooted at t_0");
  ObstacleProcess x;
  x.values.assign(m.grid.n + 1, {});
  std::vector<double> path;
  for (int depth = 0; depth <= m.grid.n; ++depth) {
    const std::uint64_t count = m.nodes_at(depth);
    x.values[depth].assign(count, 0.0);
    for (std::uint64_t idx = 0; idx < count; ++idx) {
      const NodeRef nd{depth, idx};
      if (depth == m.grid.n) {
        node_path(m, nd, path);
        x.values[depth][idx] = p.phi(view_of(path, depth + 1, m.dim), v_base);
      } else {
        const std::optional<ObstacleChoice> obs = intervention_obstacle(p, field, nd, v_base);
        x.values[depth][idx] =
            obs ? obs->value : std::numeric_limits<double>::infinity();
      }
    }
  }
  auto fixed_kernels = [&](const NodeRef& nd, const InterventionHistory&, KernelSet& out) {
    p.kernels(nd, v_base, out);
  };
  const StoppingSolution sol =
      solve_optimal_stopping(m, fixed_kernels, InterventionHistory{}, x);
  return std::abs(sol.root() - field.at(NodeRef{0, 0}, v_base));
}

// ---------------------------------------------------------------------------
// Adaptive budget selection: raise k until the certified truncation bound
// 4 C0^2 / ((k+1) delta) falls below tol, the root value stops improving by
// tol, or the hard ceiling is reached.
// ---------------------------------------------------------------------------

struct AdaptiveSolve {
  ValueField field;
  int k_used = 0;
  double certified_gap = 0.0;
  std::vector<double> roots;  // root value per visited budget
};

inline double truncation_bound(const ImpulseProblem& p, int k) {
  return 4.0 * p.C0 * p.C0 / ((double)(k + 1) * p.delta);
}

inline AdaptiveSolve solve_adaptive(const ImpulseProblem& p, double tol,
                                    std::uint64_t entry_cap = kDefaultEntryCap) {
  if (!(tol > 0.0)) throw InvalidInstance("solve_adaptive: tol must be positive");
  AdaptiveSolve out;
  const int k_hard = p.k_hard();
  for (int k = 0;; ++k) {
    out.field = solve_truncated(p, k, entry_cap);
    out.k_used = k;
    out.roots.push_back(out.field.root());
    const bool bound_ok = truncation_bound(p, k) <= tol;
    const bool stalled =
        k > 0 && out.roots[k - 1] - out.roots[k] < tol;
    if (bound_ok || stalled || k >= k_hard) break;
  }
  out.certified_gap = truncation_bound(p, out.k_used);
  return out;
}

// ---------------------------------------------------------------------------
// Truncation diagnostics: root values for k = 0..k_max must be non-increasing
// and each gap to the deepest budget must respect the certified bound.
// ---------------------------------------------------------------------------

struct TruncationReport {
  std::vector<double> roots;
  std::vector<double> gaps;    // roots[k] - roots[k_max]
  std::vector<double> bounds;  // certified bound per k
  bool monotone = true;
  bool bounded = true;
};

inline TruncationReport truncation_monotonicity_report(const ImpulseProblem& p, int k_max,
                                                       std::uint64_t entry_cap = kDefaultEntryCap) {
  TruncationReport rep;
  for (int k = 0; k <= k_max; ++k)
    rep.roots.push_back(solve_truncated(p, k, entry_cap).root());
  for (int k = 0; k <= k_max; ++k) {
    rep.gaps.push_back(rep.roots[k] - rep.roots[k_max]);
    rep.bounds.push_back(truncation_bound(p, k));
    if (k > 0 && rep.roots[k] > rep.roots[k - 1] + kResidualTol) rep.monotone = false;
    if (rep.gaps[k] > rep.bounds[k] + kValueTol) rep.bounded = false;
  }
  return rep;
}

}  // namespace robimp
