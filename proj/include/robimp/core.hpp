#pragma once

// Core lattice types: time grid, non-recombining scenario tree, intervention
// histories, kernel sets and the impulse problem container, plus instance
// validation.  Everything downstream (expectation, solver, oracles, SDE
// compilation) is built on these types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace robimp {

// ---------------------------------------------------------------------------
// Errors.  The CLI maps these onto process exit codes: invalid instance -> 2,
// size caps -> 3, discretization -> 4.  Verification failures are reported,
// not thrown.
// ---------------------------------------------------------------------------

struct InvalidInstance : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InstanceTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DiscretizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Time grid: uniform 0 = t_0 < t_1 < ... < t_n = T.
// ---------------------------------------------------------------------------

struct TimeGrid {
  int n = 0;       // number of steps; nodes live on depths 0..n
  double T = 0.0;  // horizon

  double time(int i) const { return n == 0 ? 0.0 : T * (double)i / (double)n; }
  double dt() const { return n == 0 ? 0.0 : T / (double)n; }
};

// ---------------------------------------------------------------------------
// Nodes.  A node is (depth, index) where index encodes the branch digits
// from the root, most significant first: index = sum_j branch_j B^(depth-1-j).
// ---------------------------------------------------------------------------

struct NodeRef {
  int depth = 0;
  std::uint64_t index = 0;

  friend bool operator==(const NodeRef& a, const NodeRef& b) {
    return a.depth == b.depth && a.index == b.index;
  }
};

inline NodeRef child_of(const NodeRef& nd, int branch, int branch_count) {
  return NodeRef{nd.depth + 1, nd.index * (std::uint64_t)branch_count + (std::uint64_t)branch};
}

// Branch digits of a node, root step first.
inline void node_digits(const NodeRef& nd, int branch_count, std::vector<int>& out) {
  out.assign(nd.depth, 0);
  std::uint64_t idx = nd.index;
  for (int j = nd.depth - 1; j >= 0; --j) {
    out[j] = (int)(idx % (std::uint64_t)branch_count);
    idx /= (std::uint64_t)branch_count;
  }
}

// ---------------------------------------------------------------------------
// Lattice model: every node at depth i < n has branch_count children; child m
// shifts the path by increments[i][m], a vector of length dim.
// ---------------------------------------------------------------------------

struct LatticeModel {
  TimeGrid grid;
  int branch_count = 0;
  int dim = 1;
  std::vector<double> origin;  // path value at the root, length dim
  // increments[step][branch] is a length-dim shift
  std::vector<std::vector<std::vector<double>>> increments;

  std::uint64_t nodes_at(int depth) const {
    std::uint64_t c = 1;
    for (int i = 0; i < depth; ++i) c *= (std::uint64_t)branch_count;
    return c;
  }
  std::uint64_t total_nodes() const {
    std::uint64_t total = 0, level = 1;
    for (int i = 0; i <= grid.n; ++i) {
      total += level;
      level *= (std::uint64_t)branch_count;
    }
    return total;
  }
};

constexpr std::uint64_t kDefaultNodeCap = 10'000'000;

inline LatticeModel build_lattice(const TimeGrid& grid, int branch_count, int dim,
                                  const std::vector<double>& origin,
                                  const std::vector<std::vector<std::vector<double>>>& increments,
                                  std::uint64_t node_cap = kDefaultNodeCap) {
  if (grid.n < 0) throw InvalidInstance("build_lattice: negative step count");
  if (grid.n > 0 && branch_count < 1)
    throw InvalidInstance("build_lattice: branch_count must be >= 1");
  if (dim < 1) throw InvalidInstance("build_lattice: dimension must be >= 1");
  if ((int)origin.size() != dim)
    throw InvalidInstance("build_lattice: origin has wrong dimension");
  if ((int)increments.size() != grid.n)
    throw InvalidInstance("build_lattice: need one increment row per step");
  for (int i = 0; i < grid.n; ++i) {
    if ((int)increments[i].size() != branch_count)
      throw InvalidInstance("build_lattice: increment row " + std::to_string(i) +
                            " does not have one entry per branch");
    for (int m = 0; m < branch_count; ++m)
      if ((int)increments[i][m].size() != dim)
        throw InvalidInstance("build_lattice: increment (" + std::to_string(i) + "," +
                              std::to_string(m) + ") has wrong dimension");
  }
  // overflow-safe node count against the cap
  long double total = 0, level = 1;
  for (int i = 0; i <= grid.n; ++i) {
    total += level;
    level *= branch_count;
    if (total > (long double)node_cap)
      throw InstanceTooLarge("build_lattice: node count exceeds cap of " +
                             std::to_string(node_cap));
  }
  LatticeModel m;
  m.grid = grid;
  m.branch_count = grid.n == 0 ? 0 : branch_count;
  m.dim = dim;
  m.origin = origin;
  m.increments = increments;
  return m;
}

// ---------------------------------------------------------------------------
// Path views.  Node paths are materialised into flat row-major buffers of
// dim-dimensional points; a PathView exposes the first `points` of them.
// ---------------------------------------------------------------------------

struct PathView {
  const double* data = nullptr;
  int points = 0;  // grid points covered: path values at t_0..t_{points-1}
  int dim = 1;

  double at(int i, int c = 0) const { return data[(std::size_t)i * dim + c]; }
  const double* point(int i) const { return data + (std::size_t)i * dim; }
  double terminal(int c = 0) const { return at(points - 1, c); }
};

// Fills buf with the depth+1 path points of nd (root point included).
inline void node_path(const LatticeModel& m, const NodeRef& nd, std::vector<double>& buf) {
  buf.assign((std::size_t)(nd.depth + 1) * m.dim, 0.0);
  for (int c = 0; c < m.dim; ++c) buf[c] = m.origin[c];
  std::vector<int> digits;
  node_digits(nd, m.branch_count, digits);
  for (int j = 0; j < nd.depth; ++j) {
    const std::vector<double>& inc = m.increments[j][digits[j]];
    for (int c = 0; c < m.dim; ++c)
      buf[(std::size_t)(j + 1) * m.dim + c] = buf[(std::size_t)j * m.dim + c] + inc[c];
  }
}

inline PathView view_of(const std::vector<double>& buf, int points, int dim) {
  return PathView{buf.data(), points, dim};
}

// ---------------------------------------------------------------------------
// Intervention histories: finite sequences of (grid time index, impulse
// index) with non-decreasing time indices.  Repeats at one time index are
// meaningful and ordered.
// ---------------------------------------------------------------------------

struct InterventionEntry {
  int time_index = 0;
  int impulse = 0;

  friend bool operator==(const InterventionEntry& a, const InterventionEntry& b) {
    return a.time_index == b.time_index && a.impulse == b.impulse;
  }
};

struct InterventionHistory {
  std::vector<InterventionEntry> entries;

  int size() const { return (int)entries.size(); }
  bool empty() const { return entries.empty(); }
  int last_time() const { return entries.empty() ? -1 : entries.back().time_index; }

  bool times_non_decreasing() const {
    for (std::size_t j = 1; j < entries.size(); ++j)
      if (entries[j].time_index < entries[j - 1].time_index) return false;
    return true;
  }

  friend bool operator==(const InterventionHistory& a, const InterventionHistory& b) {
    return a.entries == b.entries;
  }
};

// Appends one entry; the new time may not precede the last one.
inline InterventionHistory with_entry(const InterventionHistory& v, int time_index, int impulse) {
  if (!v.entries.empty() && time_index < v.entries.back().time_index)
    throw StructuralError("with_entry: time index precedes the last history entry");
  InterventionHistory out = v;
  out.entries.push_back(InterventionEntry{time_index, impulse});
  return out;
}

// Concatenation: w is appended to v with every time index of w clamped from
// below by the last time of v.  A history already at maximal length k_max
// (the stand-in for an infinite control) absorbs the concatenation; the
// result is always capped at k_max entries.
inline InterventionHistory concat_history(const InterventionHistory& v,
                                          const InterventionHistory& w, int k_max) {
  if (v.size() >= k_max) return v;
  InterventionHistory out = v;
  const int clamp = v.last_time();
  for (const InterventionEntry& e : w.entries) {
    if (out.size() >= k_max) break;
    InterventionEntry f = e;
    if (!v.entries.empty() && f.time_index < clamp) f.time_index = clamp;
    out.entries.push_back(f);
  }
  return out;
}

inline InterventionHistory truncate_history(const InterventionHistory& v, int k) {
  if (k < 0) throw StructuralError("truncate_history: negative length");
  InterventionHistory out;
  const int keep = std::min<int>(k, v.size());
  out.entries.assign(v.entries.begin(), v.entries.begin() + keep);
  return out;
}

// Canonical byte encoding used as a map key: depth, node index, then one
// (time, impulse) byte pair per entry.  Requires depth, times, impulses and
// branch indices to fit a byte, which the node caps guarantee in practice.
inline std::string state_key(const NodeRef& nd, const InterventionHistory& v) {
  std::string s;
  s.reserve(9 + 2 * v.entries.size());
  s.push_back((char)(unsigned char)nd.depth);
  std::uint64_t idx = nd.index;
  for (int j = 0; j < 8; ++j) {
    s.push_back((char)(unsigned char)(idx & 0xff));
    idx >>= 8;
  }
  for (const InterventionEntry& e : v.entries) {
    s.push_back((char)(unsigned char)e.time_index);
    s.push_back((char)(unsigned char)e.impulse);
  }
  return s;
}

inline void decode_state_key(const std::string& key, NodeRef& nd, InterventionHistory& v) {
  if (key.size() < 9 || (key.size() - 9) % 2 != 0)
    throw StructuralError("decode_state_key: malformed key");
  nd.depth = (int)(unsigned char)key[0];
  nd.index = 0;
  for (int j = 7; j >= 0; --j) nd.index = (nd.index << 8) | (std::uint64_t)(unsigned char)key[1 + j];
  v.entries.clear();
  for (std::size_t p = 9; p + 2 <= key.size(); p += 2)
    v.entries.push_back(InterventionEntry{(int)(unsigned char)key[p], (int)(unsigned char)key[p + 1]});
}

// All histories with time indices in {0..max_t}, at most n_impulses marks,
// length <= max_len; ordered by length, then lexicographically.
inline std::vector<InterventionHistory> enumerate_histories(int max_t, int n_impulses,
                                                            int max_len) {
  std::vector<InterventionHistory> out;
  out.push_back(InterventionHistory{});
  if (max_t < 0 || n_impulses <= 0) return out;
  std::size_t level_begin = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t level_end = out.size();
    for (std::size_t s = level_begin; s < level_end; ++s) {
      const int t_min = out[s].entries.empty() ? 0 : out[s].entries.back().time_index;
      for (int t = t_min; t <= max_t; ++t)
        for (int b = 0; b < n_impulses; ++b) out.push_back(with_entry(out[s], t, b));
    }
    level_begin = level_end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernel sets: the finite family of branch distributions the adversary can
// select from at one (node, history) pair.  Providers fill a caller-owned
// scratch set so hot loops stay allocation-free.
// ---------------------------------------------------------------------------

using Kernel = std::vector<double>;

struct KernelSet {
  std::vector<Kernel> kernels;

  int size() const { return (int)kernels.size(); }
};

using KernelProvider =
    std::function<void(const NodeRef&, const InterventionHistory&, KernelSet&)>;

inline KernelSet kernels_at(const KernelProvider& provider, const NodeRef& nd,
                            const InterventionHistory& v) {
  KernelSet ks;
  provider(nd, v, ks);
  return ks;
}

// A provider serving one fixed list of kernels at every (node, history).
inline KernelProvider constant_kernels(std::vector<Kernel> kernels) {
  auto shared = std::make_shared<std::vector<Kernel>>(std::move(kernels));
  return [shared](const NodeRef&, const InterventionHistory&, KernelSet& out) {
    out.kernels = *shared;
  };
}

// ---------------------------------------------------------------------------
// The impulse problem: lattice + impulse menu + kernel family + rewards.
//   phi  : terminal reward, sees the full leaf path and the final history.
//   cost : price of the newest intervention; sees the path prefix up to the
//          intervention time and the history whose last entry is that
//          intervention.
// ---------------------------------------------------------------------------

struct ImpulseProblem {
  LatticeModel lattice;
  std::vector<std::vector<double>> impulses;  // impulse menu values, length dim each
  KernelProvider kernels;
  std::function<double(const PathView&, const InterventionHistory&)> phi;
  std::function<double(const PathView&, const InterventionHistory&)> cost;
  double delta = 1.0;  // uniform lower bound on intervention costs
  double C0 = 1.0;     // bound on |phi| and |cost|

  int n_impulses() const { return (int)impulses.size(); }

  // Hard truncation ceiling: controls acting more often than 2*C0/delta times
  // are dominated, so this budget is value-equivalent to an unbounded one.
  int k_hard() const { return (int)std::ceil(2.0 * C0 / delta) + 2; }
};

// ---------------------------------------------------------------------------
// Instance validation.  Scans every reachable (node, history) pair up to the
// budget k_max and reports structured findings without aborting mid-scan.
// ---------------------------------------------------------------------------

struct ValidationIssue {
  std::string code;
  std::string message;
};

struct ValidationReport {
  bool pass = true;
  std::uint64_t nodes_checked = 0;
  std::uint64_t pairs_checked = 0;
  std::uint64_t issue_count = 0;
  std::vector<ValidationIssue> issues;  // first few, capped

  void add(std::string code, std::string message) {
    pass = false;
    ++issue_count;
    if (issues.size() < 32) issues.push_back({std::move(code), std::move(message)});
  }
};

namespace detail {
inline std::string hist_text(const InterventionHistory& v) {
  std::string s;
  for (std::size_t j = 0; j < v.entries.size(); ++j) {
    if (j) s += ",";
    s += std::to_string(v.entries[j].time_index) + ":" + std::to_string(v.entries[j].impulse);
  }
  return s.empty() ? std::string("-") : s;
}

inline std::string node_text(const NodeRef& nd) {
  return "(depth " + std::to_string(nd.depth) + ", node " + std::to_string(nd.index) + ")";
}
}  // namespace detail

inline ValidationReport validate_instance(const ImpulseProblem& p, int k_max,
                                          std::uint64_t node_cap = kDefaultNodeCap) {
  ValidationReport rep;
  const LatticeModel& m = p.lattice;
  const int n = m.grid.n;

  if (n < 1) rep.add("grid", "grid must have at least one step");
  if (!(m.grid.T > 0.0)) rep.add("grid", "horizon must be positive");
  if (k_max < 0) rep.add("budget", "k_max must be non-negative");
  if (!(p.delta > 0.0)) rep.add("costs", "delta must be positive");
  if (p.delta > p.C0) rep.add("costs", "delta exceeds the bound C0");
  for (std::size_t b = 0; b < p.impulses.size(); ++b)
    if ((int)p.impulses[b].size() != m.dim)
      rep.add("impulses", "impulse " + std::to_string(b) + " has wrong dimension");
  if (!p.kernels) rep.add("kernels", "kernel provider is empty");
  if (!p.phi) rep.add("rewards", "terminal reward is empty");
  if (!p.cost && !p.impulses.empty()) rep.add("rewards", "intervention cost is empty");
  if (!rep.pass) return rep;

  if (m.total_nodes() > node_cap)
    throw InstanceTooLarge("validate_instance: node count exceeds cap of " +
                           std::to_string(node_cap));
  if (n > 200 || (int)p.impulses.size() > 255)
    throw InstanceTooLarge("validate_instance: depth or impulse menu too large for key encoding");

  const int nU = p.n_impulses();
  std::vector<double> path;
  KernelSet scratch;
  const double tol_prob = 1e-12;

  for (int depth = 0; depth <= n; ++depth) {
    const std::uint64_t count = m.nodes_at(depth);
    // history menu is shared across a depth slice
    const int max_t = std::min(depth, n - 1);
    const std::vector<InterventionHistory> hists = enumerate_histories(max_t, nU, k_max);
    for (std::uint64_t idx = 0; idx < count; ++idx) {
      const NodeRef nd{depth, idx};
      ++rep.nodes_checked;
      node_path(m, nd, path);
      const PathView full = view_of(path, depth + 1, m.dim);
      for (const InterventionHistory& v : hists) {
        ++rep.pairs_checked;
        if (depth == n) {
          const double f = p.phi(full, v);
          if (!(std::abs(f) <= p.C0))
            rep.add("phi_bound", "|phi| > C0 at " + detail::node_text(nd) + " history " +
                                     detail::hist_text(v));
          continue;
        }
        // kernel family at an interior pair
        p.kernels(nd, v, scratch);
        if (scratch.kernels.empty())
          rep.add("kernels", "empty kernel set at " + detail::node_text(nd) + " history " +
                                 detail::hist_text(v));
        for (std::size_t q = 0; q < scratch.kernels.size(); ++q) {
          const Kernel& k = scratch.kernels[q];
          if ((int)k.size() != m.branch_count) {
            rep.add("kernels", "kernel " + std::to_string(q) + " at " + detail::node_text(nd) +
                                   " has wrong arity");
            continue;
          }
          double sum = 0.0;
          bool nonneg = true;
          for (double w : k) {
            if (w < 0.0) nonneg = false;
            sum += w;
          }
          if (!nonneg)
            rep.add("kernels", "negative kernel weight at " + detail::node_text(nd) +
                                   " history " + detail::hist_text(v));
          if (std::abs(sum - 1.0) > tol_prob)
            rep.add("kernels", "kernel mass off by " + std::to_string(sum - 1.0) + " at " +
                                   detail::node_text(nd) + " history " + detail::hist_text(v));
        }
        // every admissible fresh intervention must price inside [delta, C0]
        if (v.size() < k_max) {
          for (int b = 0; b < nU; ++b) {
            const InterventionHistory v2 = with_entry(v, depth, b);
            const double c = p.cost(full, v2);
            if (!(c >= p.delta))
              rep.add("cost_floor", "cost below delta at " + detail::node_text(nd) +
                                        " history " + detail::hist_text(v2));
            if (!(std::abs(c) <= p.C0))
              rep.add("cost_bound", "|cost| > C0 at " + detail::node_text(nd) + " history " +
                                        detail::hist_text(v2));
          }
        }
      }
    }
  }
  return rep;
}

}  // namespace robimp
