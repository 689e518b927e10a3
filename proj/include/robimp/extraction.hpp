#pragma once

// Strategy extraction from a solved value field and exact pair evaluation.
// The controller intervenes exactly when the intervention obstacle is within
// tolerance of the continuation value (ties intervene); the adversary plays
// the argmax kernel of the one-step expectation of the child values.

#include "dpp.hpp"

namespace robimp {

// Controller rule: impulse index to apply at (node, history), or wait.
struct ImpulseControlRule {
  std::function<std::optional<int>(const NodeRef&, const InterventionHistory&)> decide;
};

// Adversary rule: kernel index selected at (node, history up to and including
// the current time, same-time interventions already applied).
struct AdversaryStrategyRule {
  std::function<int(const NodeRef&, const InterventionHistory&)> choose;
};

// Measure selection interface for pair evaluation; strategies and fixed
// assignments are both used through this shape.
using KernelChoice = std::function<int(const NodeRef&, const InterventionHistory&)>;

namespace detail {

struct ExtractionView {
  const ImpulseProblem* p;
  const ValueField* field;

  double continuation(const NodeRef& nd, const InterventionHistory& v) const {
    const LatticeModel& m = p->lattice;
    std::vector<double> child((std::size_t)m.branch_count);
    for (int b = 0; b < m.branch_count; ++b)
      child[b] = field->at(child_of(nd, b, m.branch_count), v);
    KernelSet ks;
    p->kernels(nd, v, ks);
    return one_step_nonlinear_expectation(ks, child.data(), m.branch_count).value;
  }

  int argmax_kernel(const NodeRef& nd, const InterventionHistory& v) const {
    const LatticeModel& m = p->lattice;
    std::vector<double> child((std::size_t)m.branch_count);
    for (int b = 0; b < m.branch_count; ++b)
      child[b] = field->at(child_of(nd, b, m.branch_count), v);
    KernelSet ks;
    p->kernels(nd, v, ks);
    return one_step_nonlinear_expectation(ks, child.data(), m.branch_count).argmax;
  }
};

}  // namespace detail

// The extracted rules reference the problem and field; both must outlive the
// returned rule objects.
inline ImpulseControlRule extract_optimal_control(const ImpulseProblem& p,
                                                  const ValueField& field) {
  detail::ExtractionView view{&p, &field};
  ImpulseControlRule rule;
  rule.decide = [view](const NodeRef& nd,
                       const InterventionHistory& v) -> std::optional<int> {
    if (nd.depth >= view.p->lattice.grid.n) return std::nullopt;  // terminal slice waits
    const std::optional<ObstacleChoice> obs =
        intervention_obstacle(*view.p, *view.field, nd, v);
    if (!obs) return std::nullopt;
    if (obs->value <= view.continuation(nd, v) + kValueTol) return obs->impulse;
    return std::nullopt;
  };
  return rule;
}

inline AdversaryStrategyRule extract_worst_case_strategy(const ImpulseProblem& p,
                                                         const ValueField& field) {
  detail::ExtractionView view{&p, &field};
  AdversaryStrategyRule rule;
  rule.choose = [view](const NodeRef& nd, const InterventionHistory& v) -> int {
    if (nd.depth >= view.p->lattice.grid.n)
      throw StructuralError("strategy queried at the terminal slice");
    return view.argmax_kernel(nd, v);
  };
  return rule;
}

// ---------------------------------------------------------------------------
// Exact evaluation of a control against a measure selection: the expectation
// of terminal reward plus intervention costs is computed by full recursion
// over the play tree.  The control may fire repeatedly at one node; budget
// overruns are structural errors.
// ---------------------------------------------------------------------------

namespace detail {

struct PairCtx {
  const ImpulseProblem* p;
  const ImpulseControlRule* control;
  const KernelChoice* choice;
  int budget = 0;
  std::vector<double> path;

  double rec(const NodeRef& nd, InterventionHistory v) {
    const LatticeModel& m = p->lattice;
    double local = 0.0;
    if (nd.depth < m.grid.n) {
      while (true) {
        const std::optional<int> act = control->decide(nd, v);
        if (!act) break;
        if (*act < 0 || *act >= p->n_impulses())
          throw StructuralError("evaluate_pair: impulse index out of range");
        if (budget - v.size() <= 0)
          throw StructuralError("evaluate_pair: control exceeds the intervention budget");
        v = with_entry(v, nd.depth, *act);
        local += p->cost(view_of(path, nd.depth + 1, m.dim), v);
      }
    }
    if (nd.depth == m.grid.n)
      return local + p->phi(view_of(path, nd.depth + 1, m.dim), v);
    const int q = (*choice)(nd, v);
    KernelSet ks;
    p->kernels(nd, v, ks);
    if (q < 0 || q >= ks.size())
      throw StructuralError("evaluate_pair: kernel index out of range");
    const Kernel kernel = ks.kernels[(std::size_t)q];
    double acc = 0.0;
    for (int b = 0; b < m.branch_count; ++b) {
      const std::vector<double>& inc = m.increments[nd.depth][b];
      for (int comp = 0; comp < m.dim; ++comp)
        path[(std::size_t)(nd.depth + 1) * m.dim + comp] =
            path[(std::size_t)nd.depth * m.dim + comp] + inc[comp];
      acc += kernel[b] * rec(child_of(nd, b, m.branch_count), v);
    }
    return local + acc;
  }
};

}  // namespace detail

inline double evaluate_pair(const ImpulseProblem& p, const ImpulseControlRule& control,
                            const KernelChoice& choice, int budget) {
  detail::PairCtx ctx;
  ctx.p = &p;
  ctx.control = &control;
  ctx.choice = &choice;
  ctx.budget = budget;
  ctx.path.assign((std::size_t)(p.lattice.grid.n + 1) * p.lattice.dim, 0.0);
  for (int c = 0; c < p.lattice.dim; ++c) ctx.path[c] = p.lattice.origin[c];
  return ctx.rec(NodeRef{0, 0}, InterventionHistory{});
}

inline double evaluate_pair(const ImpulseProblem& p, const ImpulseControlRule& control,
                            const AdversaryStrategyRule& strategy, int budget) {
  const KernelChoice choice = strategy.choose;
  return evaluate_pair(p, control, choice, budget);
}

// Realized intervention counts of a control along every play path (all
// branches explored, every measure-reachable history covered).
inline int max_interventions_on_paths(const ImpulseProblem& p,
                                      const ImpulseControlRule& control, int budget) {
  struct Walker {
    const ImpulseProblem* p;
    const ImpulseControlRule* control;
    int budget;

    int rec(const NodeRef& nd, InterventionHistory v) {
      const LatticeModel& m = p->lattice;
      if (nd.depth < m.grid.n) {
        while (true) {
          const std::optional<int> act = control->decide(nd, v);
          if (!act) break;
          if (budget - v.size() <= 0)
            throw StructuralError("control exceeds the intervention budget");
          v = with_entry(v, nd.depth, *act);
        }
      }
      if (nd.depth == m.grid.n) return v.size();
      int worst = 0;
      for (int b = 0; b < m.branch_count; ++b)
        worst = std::max(worst, rec(child_of(nd, b, m.branch_count), v));
      return worst;
    }
  } w{&p, &control, budget};
  return w.rec(NodeRef{0, 0}, InterventionHistory{});
}

}  // namespace robimp
