#pragma once

// Adverse nonlinear expectation on the scenario tree: one-step and
// conditional forms, the tower identity check, optimal stopping under the
// worst-case measure, and a brute-force stopping oracle.

#include <cstdint>
#include <limits>
#include <unordered_set>

#include "core.hpp"

namespace robimp {

constexpr double kArgTieTol = 1e-12;  // tie window for arg selections
constexpr double kValueTol = 1e-9;    // tie window for stop/intervene decisions

// Values of a functional on one depth slice, dense by node index.
struct NodeFunctional {
  int depth = 0;
  std::vector<double> values;

  double at(std::uint64_t node_index) const { return values[node_index]; }
};

// Values on every slice, e.g. an obstacle process.
struct ObstacleProcess {
  std::vector<std::vector<double>> values;  // [depth][node index]

  double at(const NodeRef& nd) const { return values[nd.depth][nd.index]; }
};

// ---------------------------------------------------------------------------
// One-step operators.
// ---------------------------------------------------------------------------

inline double one_step_expectation(const Kernel& kernel, const double* child_values,
                                   int branch_count) {
  if ((int)kernel.size() != branch_count)
    throw InvalidInstance("one_step_expectation: kernel arity mismatch");
  double acc = 0.0;
  for (int m = 0; m < branch_count; ++m) acc += kernel[m] * child_values[m];
  return acc;
}

struct OneStepResult {
  double value = 0.0;
  int argmax = 0;  // smallest kernel index achieving the max within 1e-12
};

inline OneStepResult one_step_nonlinear_expectation(const KernelSet& set,
                                                    const double* child_values,
                                                    int branch_count) {
  if (set.kernels.empty())
    throw InvalidInstance("one_step_nonlinear_expectation: empty kernel set");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> per(set.kernels.size());
  for (std::size_t q = 0; q < set.kernels.size(); ++q) {
    per[q] = one_step_expectation(set.kernels[q], child_values, branch_count);
    if (per[q] > best) best = per[q];
  }
  int arg = 0;
  for (std::size_t q = 0; q < per.size(); ++q) {
    if (per[q] >= best - kArgTieTol) {
      arg = (int)q;
      break;
    }
  }
  return OneStepResult{best, arg};
}

// ---------------------------------------------------------------------------
// Conditional nonlinear expectation of a slice functional, evaluated at a
// node weakly above the slice.  The history is held fixed: this is the
// measure-selection layer only, no interventions.
// ---------------------------------------------------------------------------

namespace detail {
inline double cond_expect_rec(const LatticeModel& m, const KernelProvider& kernels,
                              const InterventionHistory& v, const NodeRef& nd,
                              const NodeFunctional& f, std::vector<KernelSet>& scratch) {
  if (nd.depth == f.depth) return f.at(nd.index);
  std::vector<double> child((std::size_t)m.branch_count);
  for (int b = 0; b < m.branch_count; ++b)
    child[b] = cond_expect_rec(m, kernels, v, child_of(nd, b, m.branch_count), f, scratch);
  KernelSet& ks = scratch[nd.depth];
  kernels(nd, v, ks);
  return one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
}
}  // namespace detail

inline double conditional_nonlinear_expectation(const LatticeModel& m,
                                                const KernelProvider& kernels,
                                                const InterventionHistory& v,
                                                const NodeRef& nd, const NodeFunctional& f) {
  if (nd.depth > f.depth)
    throw StructuralError("conditional_nonlinear_expectation: node lies below the slice");
  std::vector<KernelSet> scratch((std::size_t)f.depth + 1);
  return detail::cond_expect_rec(m, kernels, v, nd, f, scratch);
}

// ---------------------------------------------------------------------------
// Tower identity: evaluating f directly from node_s must agree with first
// collapsing f onto the intermediate depth t and then evaluating from node_s.
// ---------------------------------------------------------------------------

struct TowerReport {
  double direct = 0.0;
  double nested = 0.0;
  double discrepancy = 0.0;
};

inline TowerReport tower_check(const LatticeModel& m, const KernelProvider& kernels,
                               const InterventionHistory& v, const NodeRef& node_s, int t,
                               const NodeFunctional& f) {
  if (node_s.depth > t || t > f.depth)
    throw StructuralError("tower_check: need depth(node_s) <= t <= slice depth");
  const double direct = conditional_nonlinear_expectation(m, kernels, v, node_s, f);

  NodeFunctional g;
  g.depth = t;
  g.values.assign(m.nodes_at(t), 0.0);
  std::uint64_t span = 1;
  for (int i = node_s.depth; i < t; ++i) span *= (std::uint64_t)m.branch_count;
  const std::uint64_t first = node_s.index * span;
  for (std::uint64_t j = 0; j < span; ++j)
    g.values[first + j] =
        conditional_nonlinear_expectation(m, kernels, v, NodeRef{t, first + j}, f);
  const double nested = conditional_nonlinear_expectation(m, kernels, v, node_s, g);

  return TowerReport{direct, nested, std::abs(direct - nested)};
}

// ---------------------------------------------------------------------------
// Optimal stopping under the adverse expectation:
//   Y(leaf) = X(leaf),  Y(node) = min(X(node), max_kernel E[Y(children)]).
// The stop region is {Y = X within 1e-9}; the first entry time along each
// path is the optimal stopping rule, and the argmax kernels form the
// worst-case measure.
// ---------------------------------------------------------------------------

struct StoppingSolution {
  ObstacleProcess y;                              // value process
  std::vector<std::vector<std::uint8_t>> stop;    // stop-region flags
  std::vector<std::vector<int>> kernel_choice;    // argmax kernel per interior node

  double root() const { return y.values[0][0]; }
};

inline StoppingSolution solve_optimal_stopping(const LatticeModel& m,
                                               const KernelProvider& kernels,
                                               const InterventionHistory& v,
                                               const ObstacleProcess& obstacle,
                                               std::uint64_t node_cap = kDefaultNodeCap) {
  const int n = m.grid.n;
  if ((int)obstacle.values.size() != n + 1)
    throw InvalidInstance("solve_optimal_stopping: obstacle must cover every slice");
  if (m.total_nodes() > node_cap)
    throw InstanceTooLarge("solve_optimal_stopping: node count exceeds cap");

  StoppingSolution sol;
  sol.y.values.assign(n + 1, {});
  sol.stop.assign(n + 1, {});
  sol.kernel_choice.assign(n + 1, {});
  for (int depth = n; depth >= 0; --depth) {
    const std::uint64_t count = m.nodes_at(depth);
    if (obstacle.values[depth].size() != count)
      throw InvalidInstance("solve_optimal_stopping: obstacle slice has wrong size");
    sol.y.values[depth].assign(count, 0.0);
    sol.stop[depth].assign(count, 0);
    sol.kernel_choice[depth].assign(count, -1);
    KernelSet ks;
    std::vector<double> child((std::size_t)std::max(m.branch_count, 1));
    for (std::uint64_t idx = 0; idx < count; ++idx) {
      const double x = obstacle.values[depth][idx];
      if (depth == n) {
        sol.y.values[depth][idx] = x;
        sol.stop[depth][idx] = 1;
        continue;
      }
      for (int b = 0; b < m.branch_count; ++b)
        child[b] = sol.y.values[depth + 1][idx * (std::uint64_t)m.branch_count + b];
      kernels(NodeRef{depth, idx}, v, ks);
      const OneStepResult cont = one_step_nonlinear_expectation(ks, child.data(), m.branch_count);
      const double y = std::min(x, cont.value);
      sol.y.values[depth][idx] = y;
      sol.stop[depth][idx] = std::abs(y - x) <= kValueTol ? 1 : 0;
      sol.kernel_choice[depth][idx] = cont.argmax;
    }
  }
  return sol;
}

// Largest violation of the supermartingale inequality at nodes strictly
// before the stop region: Y(node) >= E_kernel[Y(children)] for every kernel.
inline double stopping_supermartingale_slack(const LatticeModel& m,
                                             const KernelProvider& kernels,
                                             const InterventionHistory& v,
                                             const StoppingSolution& sol) {
  double worst = 0.0;
  KernelSet ks;
  std::vector<double> child((std::size_t)std::max(m.branch_count, 1));
  for (int depth = 0; depth < m.grid.n; ++depth) {
    const std::uint64_t count = m.nodes_at(depth);
    for (std::uint64_t idx = 0; idx < count; ++idx) {
      if (sol.stop[depth][idx]) continue;
      for (int b = 0; b < m.branch_count; ++b)
        child[b] = sol.y.values[depth + 1][idx * (std::uint64_t)m.branch_count + b];
      kernels(NodeRef{depth, idx}, v, ks);
      for (const Kernel& k : ks.kernels)
        worst = std::max(worst, one_step_expectation(k, child.data(), m.branch_count) -
                                    sol.y.values[depth][idx]);
    }
  }
  return worst;
}

// Replays the extracted pair (first hit of the stop region, argmax kernels)
// as a plain expectation and returns |replay - Y(root)|.
inline double stopping_extraction_gap(const LatticeModel& m, const StoppingSolution& sol,
                                      const KernelProvider& kernels,
                                      const InterventionHistory& v,
                                      const ObstacleProcess& obstacle) {
  struct Walker {
    const LatticeModel& m;
    const StoppingSolution& sol;
    const KernelProvider& kernels;
    const InterventionHistory& v;
    const ObstacleProcess& obstacle;

    double run(const NodeRef& nd) {
      if (sol.stop[nd.depth][nd.index]) return obstacle.at(nd);
      KernelSet ks;
      kernels(nd, v, ks);
      const Kernel& k = ks.kernels[(std::size_t)sol.kernel_choice[nd.depth][nd.index]];
      double acc = 0.0;
      for (int b = 0; b < m.branch_count; ++b)
        acc += k[b] * run(child_of(nd, b, m.branch_count));
      return acc;
    }
  } w{m, sol, kernels, v, obstacle};
  return std::abs(w.run(NodeRef{0, 0}) - sol.root());
}

// ---------------------------------------------------------------------------
// Brute-force stopping oracle.
//   upper: min over adapted stopping rules of the adverse expectation of the
//          stopped payoff (rules enumerated explicitly as stop antichains).
//   lower: max over full measure assignments (one kernel per interior node)
//          of the classical stopped minimum under that fixed measure.
// ---------------------------------------------------------------------------

struct StoppingOracleResult {
  double upper = 0.0;
  double lower = 0.0;
  std::uint64_t n_rules = 0;
  std::uint64_t n_assignments = 0;
};

namespace detail {

// Enumerate stop antichains: each rule is the set of nodes where it stops,
// minimal along every path; leaves stop by force.
inline void enumerate_stop_rules(const LatticeModel& m, const NodeRef& nd,
                                 std::vector<std::vector<std::string>>& out) {
  std::vector<std::string> self{state_key(nd, InterventionHistory{})};
  if (nd.depth == m.grid.n) {
    out.push_back(std::move(self));
    return;
  }
  out.push_back(std::move(self));  // stop here
  std::vector<std::vector<std::vector<std::string>>> per_child(m.branch_count);
  for (int b = 0; b < m.branch_count; ++b)
    enumerate_stop_rules(m, child_of(nd, b, m.branch_count), per_child[b]);
  // cartesian product of the children's rule lists
  std::vector<std::size_t> pick(m.branch_count, 0);
  while (true) {
    std::vector<std::string> merged;
    for (int b = 0; b < m.branch_count; ++b)
      merged.insert(merged.end(), per_child[b][pick[b]].begin(), per_child[b][pick[b]].end());
    out.push_back(std::move(merged));
    int d = m.branch_count - 1;
    while (d >= 0) {
      if (++pick[d] < per_child[d].size()) break;
      pick[d] = 0;
      --d;
    }
    if (d < 0) break;
  }
}

inline double eval_rule_adverse(const LatticeModel& m, const KernelProvider& kernels,
                                const InterventionHistory& v, const ObstacleProcess& obstacle,
                                const std::unordered_set<std::string>& stops,
                                const NodeRef& nd) {
  if (stops.count(state_key(nd, InterventionHistory{}))) return obstacle.at(nd);
  std::vector<double> child((std::size_t)m.branch_count);
  for (int b = 0; b < m.branch_count; ++b)
    child[b] = eval_rule_adverse(m, kernels, v, obstacle, stops, child_of(nd, b, m.branch_count));
  KernelSet ks;
  kernels(nd, v, ks);
  return one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
}

}  // namespace detail

inline StoppingOracleResult stopping_value_oracle(const LatticeModel& m,
                                                  const KernelProvider& kernels,
                                                  const InterventionHistory& v,
                                                  const ObstacleProcess& obstacle,
                                                  std::uint64_t max_rules = 1'000'000,
                                                  std::uint64_t max_assignments = 1'000'000,
                                                  std::uint64_t node_cap = 10'000) {
  const int n = m.grid.n;
  if (m.total_nodes() > node_cap)
    throw InstanceTooLarge("stopping_value_oracle: node count exceeds cap");

  StoppingOracleResult res;

  // upper value: explicit rule enumeration
  std::vector<std::vector<std::string>> rules;
  detail::enumerate_stop_rules(m, NodeRef{0, 0}, rules);
  if ((std::uint64_t)rules.size() > max_rules)
    throw InstanceTooLarge("stopping_value_oracle: rule count exceeds cap");
  res.n_rules = rules.size();
  double upper = std::numeric_limits<double>::infinity();
  for (const std::vector<std::string>& rule : rules) {
    std::unordered_set<std::string> stops(rule.begin(), rule.end());
    upper = std::min(upper,
                     detail::eval_rule_adverse(m, kernels, v, obstacle, stops, NodeRef{0, 0}));
  }
  res.upper = upper;

  // lower value: one kernel fixed per interior node, classical stopped min
  std::vector<NodeRef> interior;
  std::vector<int> radix;
  double combos = 1.0;
  KernelSet ks;
  for (int depth = 0; depth < n; ++depth)
    for (std::uint64_t idx = 0; idx < m.nodes_at(depth); ++idx) {
      const NodeRef nd{depth, idx};
      kernels(nd, v, ks);
      interior.push_back(nd);
      radix.push_back(ks.size());
      combos *= (double)ks.size();
    }
  if (combos > (double)max_assignments)
    throw InstanceTooLarge("stopping_value_oracle: assignment count exceeds cap");

  std::vector<int> pick(interior.size(), 0);
  double lower = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> val(n + 1);
  while (true) {
    ++res.n_assignments;
    // classical backward induction under the fixed assignment
    val[n] = obstacle.values[n];
    std::size_t cursor = interior.size();
    for (int depth = n - 1; depth >= 0; --depth) {
      const std::uint64_t count = m.nodes_at(depth);
      val[depth].assign(count, 0.0);
      cursor -= count;
      for (std::uint64_t idx = 0; idx < count; ++idx) {
        const NodeRef nd{depth, idx};
        kernels(nd, v, ks);
        const Kernel& k = ks.kernels[(std::size_t)pick[cursor + idx]];
        double acc = 0.0;
        for (int b = 0; b < m.branch_count; ++b)
          acc += k[b] * val[depth + 1][idx * (std::uint64_t)m.branch_count + b];
        val[depth][idx] = std::min(obstacle.values[depth][idx], acc);
      }
    }
    lower = std::max(lower, val[0][0]);
    int d = (int)interior.size() - 1;
    while (d >= 0) {
      if (++pick[d] < radix[d]) break;
      pick[d] = 0;
      --d;
    }
    if (d < 0) break;
  }
  res.lower = lower;
  return res;
}

}  // namespace robimp
