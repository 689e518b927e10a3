#pragma once

// Brute-force certification of the game value on small instances.
//
//   upper: min over tree-adapted impulse controls of the adversary's exact
//          best response (which decomposes node by node for a fixed control);
//   lower: max over non-anticipative measure strategies -- functions of the
//          realized (node, history) pair -- of the exact minimum over
//          controls of the pair evaluation.
//
// Strategy spaces grow doubly exponentially; hard caps are enforced and
// never worked around.

#include "extraction.hpp"
#include "rng.hpp"

namespace robimp {

struct EnumerationCaps {
  std::uint64_t max_controls = 1'000'000;
  std::uint64_t max_strategies = 1'000'000;
  std::uint64_t max_nodes = 10'000;
};

// ---------------------------------------------------------------------------
// Dense index over the interior (node, history) pairs reachable with budget
// k.  Scan order (depth, node index, history enumeration order) is the
// canonical order used by every enumeration below.
// ---------------------------------------------------------------------------

struct StateIndex {
  std::vector<NodeRef> nodes;
  std::vector<InterventionHistory> hists;
  std::unordered_map<std::string, std::uint32_t> lookup;

  std::uint32_t at(const NodeRef& nd, const InterventionHistory& v) const {
    auto it = lookup.find(state_key(nd, v));
    if (it == lookup.end())
      throw StructuralError("state index miss at " + detail::node_text(nd) + " history " +
                            detail::hist_text(v));
    return it->second;
  }

  std::size_t size() const { return nodes.size(); }
};

inline StateIndex build_state_index(const ImpulseProblem& p, int k,
                                    const EnumerationCaps& caps) {
  const LatticeModel& m = p.lattice;
  if (m.total_nodes() > caps.max_nodes)
    throw InstanceTooLarge("build_state_index: node count exceeds cap");
  StateIndex idx;
  for (int depth = 0; depth < m.grid.n; ++depth) {
    const std::vector<InterventionHistory> hists =
        enumerate_histories(std::min(depth, m.grid.n - 1), p.n_impulses(), k);
    for (std::uint64_t node = 0; node < m.nodes_at(depth); ++node)
      for (const InterventionHistory& v : hists) {
        const NodeRef nd{depth, node};
        idx.lookup.emplace(state_key(nd, v), (std::uint32_t)idx.nodes.size());
        idx.nodes.push_back(nd);
        idx.hists.push_back(v);
      }
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Control enumeration.  A control is a table over indexed states: -1 waits,
// b >= 0 fires impulse b (and the next decision happens at the same node with
// the longer history).  Only states reachable under the control's own
// earlier choices branch the enumeration, so each distinct behaviour is
// produced exactly once, depth-first, wait before impulses.
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
struct ControlEnum {
  const ImpulseProblem& p;
  const StateIndex& idx;
  int k;
  std::uint64_t cap;
  F& emit;
  std::vector<signed char> act;
  std::uint64_t count = 0;

  void expand(std::vector<std::pair<NodeRef, InterventionHistory>>& pending) {
    if (pending.empty()) {
      if (++count > cap) throw InstanceTooLarge("enumerate_controls: cap exceeded");
      emit(act);
      return;
    }
    const auto [nd, v] = pending.back();
    pending.pop_back();
    const std::uint32_t slot = idx.at(nd, v);

    // wait: the node's children become decision points with the same history
    act[slot] = -1;
    std::size_t pushed = 0;
    for (int b = p.lattice.branch_count - 1; b >= 0; --b) {
      const NodeRef ch = child_of(nd, b, p.lattice.branch_count);
      if (ch.depth < p.lattice.grid.n) {
        pending.emplace_back(ch, v);
        ++pushed;
      }
    }
    expand(pending);
    pending.resize(pending.size() - pushed);

    // impulses: same node, longer history
    if (k - v.size() >= 1) {
      for (int b = 0; b < p.n_impulses(); ++b) {
        act[slot] = (signed char)b;
        pending.emplace_back(nd, with_entry(v, nd.depth, b));
        expand(pending);
        pending.pop_back();
      }
      act[slot] = -1;
    }
    pending.emplace_back(nd, v);
  }
};

}  // namespace detail

template <typename F>
std::uint64_t enumerate_controls(const ImpulseProblem& p, const StateIndex& idx, int k,
                                 const EnumerationCaps& caps, F&& emit) {
  if (p.lattice.grid.n == 0) {
    std::vector<signed char> none;
    emit(none);
    return 1;
  }
  detail::ControlEnum<F> e{p, idx, k, caps.max_controls, emit, {}, 0};
  e.act.assign(idx.size(), -1);
  std::vector<std::pair<NodeRef, InterventionHistory>> pending;
  pending.emplace_back(NodeRef{0, 0}, InterventionHistory{});
  e.expand(pending);
  return e.count;
}

// Table-backed control rule over the state index.
inline ImpulseControlRule control_from_table(const ImpulseProblem& p, const StateIndex& idx,
                                             const std::vector<signed char>& act, int k) {
  ImpulseControlRule rule;
  const std::vector<signed char>* tab = &act;
  const StateIndex* ix = &idx;
  const int n = p.lattice.grid.n;
  rule.decide = [tab, ix, k, n](const NodeRef& nd,
                                const InterventionHistory& v) -> std::optional<int> {
    if (nd.depth >= n || k - v.size() <= 0) return std::nullopt;
    const signed char a = (*tab)[ix->at(nd, v)];
    if (a < 0) return std::nullopt;
    return (int)a;
  };
  return rule;
}

// ---------------------------------------------------------------------------
// Strategy enumeration: one kernel index per indexed state, mixed-radix
// odometer in state order.
// ---------------------------------------------------------------------------

inline std::uint64_t count_strategies(const ImpulseProblem& p, const StateIndex& idx,
                                      const EnumerationCaps& caps, std::vector<int>& radix) {
  radix.assign(idx.size(), 0);
  KernelSet ks;
  double combos = 1.0;
  for (std::size_t s = 0; s < idx.size(); ++s) {
    p.kernels(idx.nodes[s], idx.hists[s], ks);
    radix[s] = ks.size();
    combos *= (double)ks.size();
    if (combos > (double)caps.max_strategies)
      throw InstanceTooLarge("enumerate_strategies: cap exceeded");
  }
  return (std::uint64_t)combos;
}

template <typename F>
std::uint64_t enumerate_strategies(const ImpulseProblem& p, const StateIndex& idx,
                                   const EnumerationCaps& caps, F&& emit) {
  std::vector<int> radix;
  count_strategies(p, idx, caps, radix);
  std::vector<int> pick(idx.size(), 0);
  std::uint64_t count = 0;
  while (true) {
    ++count;
    emit(pick);
    int d = (int)pick.size() - 1;
    while (d >= 0) {
      if (++pick[d] < radix[d]) break;
      pick[d] = 0;
      --d;
    }
    if (d < 0) break;
    if (pick.empty()) break;
  }
  return count;
}

inline KernelChoice strategy_from_table(const StateIndex& idx, const std::vector<int>& pick) {
  const StateIndex* ix = &idx;
  const std::vector<int>* tab = &pick;
  return [ix, tab](const NodeRef& nd, const InterventionHistory& v) -> int {
    return (*tab)[ix->at(nd, v)];
  };
}

// ---------------------------------------------------------------------------
// Brute-force upper value: for each control, the adversary's best response
// decomposes node by node, so it is an exact backward pass along the play.
// ---------------------------------------------------------------------------

namespace detail {

struct BestResponse {
  const ImpulseProblem* p;
  const StateIndex* idx;
  const std::vector<signed char>* act;
  int k;
  std::vector<double> path;

  double rec(const NodeRef& nd, InterventionHistory v) {
    const LatticeModel& m = p->lattice;
    double local = 0.0;
    if (nd.depth < m.grid.n) {
      while (k - v.size() >= 1) {
        const signed char a = (*act)[idx->at(nd, v)];
        if (a < 0) break;
        v = with_entry(v, nd.depth, (int)a);
        local += p->cost(view_of(path, nd.depth + 1, m.dim), v);
      }
    }
    if (nd.depth == m.grid.n)
      return local + p->phi(view_of(path, nd.depth + 1, m.dim), v);
    std::vector<double> child((std::size_t)m.branch_count);
    for (int b = 0; b < m.branch_count; ++b) {
      const std::vector<double>& inc = m.increments[nd.depth][b];
      for (int comp = 0; comp < m.dim; ++comp)
        path[(std::size_t)(nd.depth + 1) * m.dim + comp] =
            path[(std::size_t)nd.depth * m.dim + comp] + inc[comp];
      child[b] = rec(child_of(nd, b, m.branch_count), v);
    }
    KernelSet ks;
    p->kernels(nd, v, ks);
    return local + one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
  }
};

}  // namespace detail

struct BruteValue {
  double value = 0.0;
  std::uint64_t count = 0;
};

inline BruteValue brute_upper_value(const ImpulseProblem& p, int k,
                                    const EnumerationCaps& caps) {
  const StateIndex idx = build_state_index(p, k, caps);
  BruteValue out;
  out.value = std::numeric_limits<double>::infinity();
  out.count = enumerate_controls(p, idx, k, caps, [&](const std::vector<signed char>& act) {
    detail::BestResponse br{&p, &idx, &act, k, {}};
    br.path.assign((std::size_t)(p.lattice.grid.n + 1) * p.lattice.dim, 0.0);
    for (int c = 0; c < p.lattice.dim; ++c) br.path[c] = p.lattice.origin[c];
    out.value = std::min(out.value, br.rec(NodeRef{0, 0}, InterventionHistory{}));
  });
  return out;
}

inline BruteValue brute_lower_value(const ImpulseProblem& p, int k,
                                    const EnumerationCaps& caps) {
  const StateIndex idx = build_state_index(p, k, caps);
  // materialise the control tables once
  std::vector<std::vector<signed char>> controls;
  enumerate_controls(p, idx, k, caps,
                     [&](const std::vector<signed char>& act) { controls.push_back(act); });
  std::vector<ImpulseControlRule> rules;
  rules.reserve(controls.size());
  for (const std::vector<signed char>& act : controls)
    rules.push_back(control_from_table(p, idx, act, k));

  BruteValue out;
  out.value = -std::numeric_limits<double>::infinity();
  out.count = enumerate_strategies(p, idx, caps, [&](const std::vector<int>& pick) {
    const KernelChoice choice = strategy_from_table(idx, pick);
    double best = std::numeric_limits<double>::infinity();
    for (const ImpulseControlRule& rule : rules)
      best = std::min(best, evaluate_pair(p, rule, choice, k));
    out.value = std::max(out.value, best);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Game value certificate: dual brute-force routes against the DPP root.
// ---------------------------------------------------------------------------

struct GameValueReport {
  double upper = 0.0;
  double lower = 0.0;
  double dp_value = 0.0;
  std::uint64_t n_controls = 0;
  std::uint64_t n_strategies = 0;
  bool pass = false;
};

inline GameValueReport check_game_value(const ImpulseProblem& p, int k,
                                        const EnumerationCaps& caps,
                                        std::uint64_t entry_cap = kDefaultEntryCap) {
  GameValueReport rep;
  const BruteValue up = brute_upper_value(p, k, caps);
  const BruteValue lo = brute_lower_value(p, k, caps);
  rep.upper = up.value;
  rep.lower = lo.value;
  rep.n_controls = up.count;
  rep.n_strategies = lo.count;
  rep.dp_value = solve_truncated(p, k, entry_cap).root();
  rep.pass = std::abs(rep.upper - rep.lower) <= kValueTol &&
             std::abs(rep.upper - rep.dp_value) <= kValueTol;
  return rep;
}

// ---------------------------------------------------------------------------
// Saddle-point verification of an extracted pair (u*, P*):
//   (a) their pair value matches the field root;
//   (b) no enumerable control does better against P*;
//   (c) no fixed measure assignment along u*'s realized histories does
//       better against u*.
// ---------------------------------------------------------------------------

struct SaddleReport {
  double root = 0.0;
  double pair_value = 0.0;
  double control_best = 0.0;   // min over controls against P*
  double measure_best = 0.0;   // max over assignments against u*
  std::uint64_t n_controls = 0;
  std::uint64_t n_assignments = 0;
  bool pass = false;
};

inline SaddleReport verify_saddle(const ImpulseProblem& p, const ValueField& field,
                                  const EnumerationCaps& caps) {
  const int k = field.budget;
  const ImpulseControlRule ustar = extract_optimal_control(p, field);
  const AdversaryStrategyRule pstar = extract_worst_case_strategy(p, field);

  SaddleReport rep;
  rep.root = field.root();
  rep.pair_value = evaluate_pair(p, ustar, pstar, k);

  // (b) sweep all controls against the extracted strategy
  const StateIndex idx = build_state_index(p, k, caps);
  const KernelChoice pstar_choice = pstar.choose;
  rep.control_best = std::numeric_limits<double>::infinity();
  rep.n_controls = enumerate_controls(
      p, idx, k, caps, [&](const std::vector<signed char>& act) {
        const ImpulseControlRule rule = control_from_table(p, idx, act, k);
        rep.control_best = std::min(rep.control_best, evaluate_pair(p, rule, pstar_choice, k));
      });

  // (c) realized histories of u* node by node, then every fixed assignment
  std::unordered_map<std::string, InterventionHistory> realized;
  {
    struct Walk {
      const ImpulseProblem* p;
      const ImpulseControlRule* u;
      int k;
      std::unordered_map<std::string, InterventionHistory>* out;

      void rec(const NodeRef& nd, InterventionHistory v) {
        const LatticeModel& m = p->lattice;
        if (nd.depth < m.grid.n) {
          while (true) {
            const std::optional<int> act = u->decide(nd, v);
            if (!act) break;
            if (k - v.size() <= 0) throw StructuralError("verify_saddle: budget overrun");
            v = with_entry(v, nd.depth, *act);
          }
        }
        out->emplace(state_key(nd, InterventionHistory{}), v);
        if (nd.depth == m.grid.n) return;
        for (int b = 0; b < m.branch_count; ++b) rec(child_of(nd, b, m.branch_count), v);
      }
    } w{&p, &ustar, k, &realized};
    w.rec(NodeRef{0, 0}, InterventionHistory{});
  }
  std::vector<NodeRef> interior;
  std::vector<int> radix;
  KernelSet ks;
  double combos = 1.0;
  for (int depth = 0; depth < p.lattice.grid.n; ++depth)
    for (std::uint64_t node = 0; node < p.lattice.nodes_at(depth); ++node) {
      const NodeRef nd{depth, node};
      p.kernels(nd, realized.at(state_key(nd, InterventionHistory{})), ks);
      interior.push_back(nd);
      radix.push_back(ks.size());
      combos *= (double)ks.size();
      if (combos > (double)caps.max_strategies)
        throw InstanceTooLarge("verify_saddle: assignment count exceeds cap");
    }
  std::unordered_map<std::string, std::size_t> node_slot;
  for (std::size_t s = 0; s < interior.size(); ++s)
    node_slot.emplace(state_key(interior[s], InterventionHistory{}), s);

  rep.measure_best = -std::numeric_limits<double>::infinity();
  std::vector<int> pick(interior.size(), 0);
  while (true) {
    ++rep.n_assignments;
    const KernelChoice choice = [&](const NodeRef& nd, const InterventionHistory&) -> int {
      return pick[node_slot.at(state_key(nd, InterventionHistory{}))];
    };
    rep.measure_best = std::max(rep.measure_best, evaluate_pair(p, ustar, choice, k));
    int d = (int)pick.size() - 1;
    while (d >= 0) {
      if (++pick[d] < radix[d]) break;
      pick[d] = 0;
      --d;
    }
    if (d < 0) break;
    if (pick.empty()) break;
  }

  rep.pass = std::abs(rep.pair_value - rep.root) <= kValueTol &&
             rep.control_best >= rep.root - kValueTol &&
             rep.measure_best <= rep.root + kValueTol;
  return rep;
}

// ---------------------------------------------------------------------------
// Tamper detection: a correct field has one-step residual 0; flipping any
// single entry by eps >= 0.01 must raise the residual to at least eps.
// ---------------------------------------------------------------------------

struct UniquenessReport {
  std::uint64_t trials = 0;
  std::uint64_t detected = 0;
  double base_residual = 0.0;
  double worst_margin = 0.0;  // min over trials of residual - (eps - 1e-9)
  bool pass = false;
};

inline UniquenessReport uniqueness_probe(const ImpulseProblem& p, const ValueField& field,
                                         int trials, std::uint64_t seed) {
  UniquenessReport rep;
  rep.base_residual = dpp_residual(p, field);
  const std::vector<ValueField::Entry> entries = field.sorted_entries();
  const CounterRng rng(seed, 0x756e6971ULL);
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    const std::size_t pickAt =
        (std::size_t)(rng.uniform((std::uint64_t)t, 0) * (double)entries.size());
    const std::size_t slot = std::min(pickAt, entries.size() - 1);
    const double eps = 0.01 + 0.99 * rng.uniform((std::uint64_t)t, 1);
    const double sign = t % 2 == 0 ? 1.0 : -1.0;
    ValueField bumped = field;
    bumped.table[state_key(entries[slot].node, entries[slot].hist)] += sign * eps;
    const double res = dpp_residual(p, bumped);
    ++rep.trials;
    if (res >= eps - kValueTol) ++rep.detected;
    rep.worst_margin = std::min(rep.worst_margin, res - (eps - kValueTol));
  }
  rep.pass = rep.base_residual <= kResidualTol && rep.detected == rep.trials;
  return rep;
}

// ---------------------------------------------------------------------------
// Classical impulse DP for single-kernel instances: an independent forward
// tabulation, slice by slice, used to certify the degenerate case where the
// adverse expectation collapses to a plain one.
// ---------------------------------------------------------------------------

inline double classical_impulse_dp_value(const ImpulseProblem& p, int k,
                                         std::uint64_t entry_cap = kDefaultEntryCap) {
  const LatticeModel& m = p.lattice;
  const int n = m.grid.n;
  std::unordered_map<std::string, double> ahead, slice;
  std::vector<double> path;
  KernelSet ks;
  std::uint64_t entries = 0;
  for (int depth = n; depth >= 0; --depth) {
    slice.clear();
    std::vector<InterventionHistory> hists =
        enumerate_histories(std::min(depth, n - 1), p.n_impulses(), k);
    std::sort(hists.begin(), hists.end(),
              [](const InterventionHistory& a, const InterventionHistory& b) {
                return a.size() > b.size();
              });
    for (std::uint64_t node = 0; node < m.nodes_at(depth); ++node) {
      const NodeRef nd{depth, node};
      node_path(m, nd, path);
      const PathView full = view_of(path, depth + 1, m.dim);
      for (const InterventionHistory& v : hists) {
        double val;
        if (depth == n) {
          val = p.phi(full, v);
        } else {
          p.kernels(nd, v, ks);
          if (ks.size() != 1)
            throw InvalidInstance("classical_impulse_dp_value: kernel set is not a singleton");
          double cont = 0.0;
          for (int b = 0; b < m.branch_count; ++b)
            cont += ks.kernels[0][b] *
                    ahead.at(state_key(child_of(nd, b, m.branch_count), v));
          val = cont;
          if (k - v.size() >= 1 && p.n_impulses() > 0) {
            double obs = std::numeric_limits<double>::infinity();
            for (int b = 0; b < p.n_impulses(); ++b) {
              const InterventionHistory v2 = with_entry(v, depth, b);
              const double tot = slice.at(state_key(nd, v2)) + p.cost(full, v2);
              if (tot < obs) obs = tot;
            }
            val = std::min(obs, cont);
          }
        }
        slice.emplace(state_key(nd, v), val);
        if (++entries > entry_cap)
          throw InstanceTooLarge("classical_impulse_dp_value: table exceeds cap");
      }
    }
    ahead = std::move(slice);
    slice = {};
  }
  return ahead.at(state_key(NodeRef{0, 0}, InterventionHistory{}));
}

}  // namespace robimp
