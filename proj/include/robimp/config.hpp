#pragma once

// JSON instance configs.  A config either describes a lattice problem
// directly (grid / lattice / kernels / impulses / costs) or an SDE game
// (sdg / impulses) built from small coefficient families.  For the SDE
// families the loader re-derives a box bound on the reachable state and
// rejects stated delta / c0 values the family parameters cannot honour.

#include "io.hpp"

namespace robimp {

struct InstanceDefaults {
  int n = 1;            // grid steps used when compiling an SDE game
  double lambda = 1.0;  // lattice spacing multiple
  int k = 2;            // intervention budget for solves
  std::uint64_t seed = 0;
};

struct LoadedInstance {
  bool has_problem = false;
  bool has_sde = false;
  ImpulseProblem problem;
  SdeInstance sde;
  InstanceDefaults defaults;
};

namespace detail {

inline double json_num(const json& j, const char* key) {
  if (!j.contains(key)) throw InvalidInstance(std::string("config: missing '") + key + "'");
  if (!j[key].is_number()) throw InvalidInstance(std::string("config: '") + key + "' must be a number");
  return j[key].get<double>();
}

inline int json_int(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer())
    throw InvalidInstance(std::string("config: '") + key + "' must be an integer");
  return j[key].get<int>();
}

inline std::string json_kind(const json& j, const char* where) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw InvalidInstance(std::string("config: ") + where + " needs a string 'kind'");
  return j["kind"].get<std::string>();
}

inline std::vector<std::vector<double>> json_matrix(const json& j, const char* where) {
  if (!j.is_array()) throw InvalidInstance(std::string("config: ") + where + " must be an array");
  std::vector<std::vector<double>> out;
  for (const json& row : j) {
    if (!row.is_array()) throw InvalidInstance(std::string("config: ") + where + " rows must be arrays");
    out.push_back(row.get<std::vector<double>>());
  }
  return out;
}

// bounded pseudo-random scalar from the path prefix and history
inline double hash_unit(const PathView& pv, const InterventionHistory& v, std::uint64_t salt) {
  std::uint64_t h = mix64(0x7261626c65ULL ^ salt);
  for (int i = 0; i < pv.points; ++i)
    for (int c = 0; c < pv.dim; ++c) {
      std::uint64_t bits;
      const double val = pv.at(i, c);
      static_assert(sizeof(bits) == sizeof(val));
      std::memcpy(&bits, &val, sizeof(bits));
      h = hash_combine(h, bits);
    }
  for (const InterventionEntry& e : v.entries)
    h = hash_combine(hash_combine(h, (std::uint64_t)e.time_index), (std::uint64_t)e.impulse);
  return bits_to_unit(h);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Direct lattice configs
// ---------------------------------------------------------------------------

namespace detail {

inline std::function<double(const PathView&, const InterventionHistory&)> make_phi(
    const json& desc, const std::vector<std::vector<double>>& impulses) {
  const std::string kind = json_kind(desc, "costs.phi");
  if (kind == "terminal_state_first_impulse") {
    const std::vector<double> offsets = desc.at("offsets").get<std::vector<double>>();
    if (offsets.size() != impulses.size())
      throw InvalidInstance("config: phi offsets must match the impulse menu");
    return [offsets](const PathView& pv, const InterventionHistory& v) {
      double out = pv.terminal(0);
      if (!v.empty()) out += offsets[(std::size_t)v.entries.front().impulse];
      return out;
    };
  }
  if (kind == "terminal_state_per_impulse") {
    const std::vector<double> offsets = desc.at("offsets").get<std::vector<double>>();
    if (offsets.size() != impulses.size())
      throw InvalidInstance("config: phi offsets must match the impulse menu");
    return [offsets](const PathView& pv, const InterventionHistory& v) {
      double out = pv.terminal(0);
      for (const InterventionEntry& e : v.entries) out += offsets[(std::size_t)e.impulse];
      return out;
    };
  }
  if (kind == "table_hash") {
    const double center = desc.value("center", 0.0);
    const double scale = json_num(desc, "scale");
    const std::uint64_t salt = (std::uint64_t)desc.value("salt", 0);
    return [center, scale, salt](const PathView& pv, const InterventionHistory& v) {
      return center + scale * (2.0 * hash_unit(pv, v, salt) - 1.0);
    };
  }
  throw InvalidInstance("config: unknown phi kind '" + kind + "'");
}

inline std::function<double(const PathView&, const InterventionHistory&)> make_cost(
    const json& desc, const std::vector<std::vector<double>>& impulses) {
  const std::string kind = json_kind(desc, "costs.c");
  if (kind == "constant") {
    const double value = json_num(desc, "value");
    return [value](const PathView&, const InterventionHistory&) { return value; };
  }
  if (kind == "per_impulse") {
    const std::vector<double> values = desc.at("values").get<std::vector<double>>();
    if (values.size() != impulses.size())
      throw InvalidInstance("config: cost values must match the impulse menu");
    return [values](const PathView&, const InterventionHistory& v) {
      return values[(std::size_t)v.entries.back().impulse];
    };
  }
  if (kind == "table_hash") {
    const double lo = json_num(desc, "lo");
    const double hi = json_num(desc, "hi");
    if (!(lo <= hi)) throw InvalidInstance("config: cost table_hash needs lo <= hi");
    const std::uint64_t salt = (std::uint64_t)desc.value("salt", 1);
    return [lo, hi, salt](const PathView& pv, const InterventionHistory& v) {
      return lo + (hi - lo) * hash_unit(pv, v, salt);
    };
  }
  throw InvalidInstance("config: unknown cost kind '" + kind + "'");
}

inline ImpulseProblem load_lattice_problem(const json& root) {
  const json& grid_j = root.at("grid");
  TimeGrid grid{json_int(grid_j, "n"), json_num(grid_j, "T")};

  const json& lat = root.at("lattice");
  const int branch_count = json_int(lat, "branch_count");
  const int dim = lat.value("dimension", 1);
  std::vector<double> origin =
      lat.contains("origin") ? lat["origin"].get<std::vector<double>>()
                             : std::vector<double>((std::size_t)dim, 0.0);
  if (!lat.contains("increments") || !lat["increments"].is_array())
    throw InvalidInstance("config: lattice.increments must be an array");
  std::vector<std::vector<std::vector<double>>> incs;
  for (const json& step : lat["increments"]) incs.push_back(json_matrix(step, "increments"));
  if ((int)incs.size() == 1 && grid.n > 1) incs.assign((std::size_t)grid.n, incs[0]);

  ImpulseProblem p;
  p.lattice = build_lattice(grid, branch_count, dim, origin, incs);

  const json& ker = root.at("kernels");
  if (ker.contains("table")) {
    std::vector<Kernel> table;
    for (const json& row : ker["table"]) table.push_back(row.get<Kernel>());
    p.kernels = constant_kernels(table);
  } else if (ker.contains("per_depth")) {
    std::vector<std::vector<Kernel>> by_depth;
    for (const json& layer : ker["per_depth"]) {
      std::vector<Kernel> table;
      for (const json& row : layer) table.push_back(row.get<Kernel>());
      by_depth.push_back(table);
    }
    if ((int)by_depth.size() != grid.n)
      throw InvalidInstance("config: kernels.per_depth needs one layer per step");
    p.kernels = [by_depth](const NodeRef& nd, const InterventionHistory&, KernelSet& out) {
      out.kernels = by_depth[(std::size_t)nd.depth];
    };
  } else {
    throw InvalidInstance("config: kernels needs 'table' or 'per_depth'");
  }

  if (root.contains("impulses")) p.impulses = json_matrix(root.at("impulses").at("values"), "impulses");
  for (const std::vector<double>& beta : p.impulses)
    if ((int)beta.size() != dim)
      throw InvalidInstance("config: impulse dimension mismatch");

  const json& costs = root.at("costs");
  p.delta = json_num(costs, "delta");
  p.C0 = json_num(costs, "c0");
  p.phi = make_phi(costs.at("phi"), p.impulses);
  p.cost = p.impulses.empty()
               ? std::function<double(const PathView&, const InterventionHistory&)>(
                     [](const PathView&, const InterventionHistory&) -> double {
                       throw StructuralError("cost: instance has no impulses");
                     })
               : make_cost(costs.at("c"), p.impulses);
  return p;
}

// ---------------------------------------------------------------------------
// SDE family configs
// ---------------------------------------------------------------------------

inline SdeInstance load_sde_instance(const json& root, const json& sdg) {
  SdeInstance sde;
  sde.dim = 1;
  sde.T = json_num(sdg, "T");
  sde.x0 = sdg.at("x0").get<std::vector<double>>();
  if (sde.x0.size() != 1) throw InvalidInstance("config: sdg.x0 must be scalar");
  if (root.contains("impulses"))
    sde.impulses = json_matrix(root.at("impulses").at("values"), "impulses");
  for (const std::vector<double>& beta : sde.impulses)
    if (beta.size() != 1) throw InvalidInstance("config: sdg impulses must be scalar");

  // diffusion
  const json& sig = sdg.at("sigma");
  const std::string sig_kind = json_kind(sig, "sdg.sigma");
  if (sig_kind == "constant") {
    const std::vector<double> values = sig.at("values").get<std::vector<double>>();
    if (values.empty()) throw InvalidInstance("config: sdg.sigma.values empty");
    for (const double s : values)
      if (!(s > 0.0)) throw InvalidInstance("config: sdg.sigma values must be positive");
    for (const double s : values) sde.a_disc.push_back({s});
    sde.sigma_min = *std::min_element(values.begin(), values.end());
    sde.sigma_max = *std::max_element(values.begin(), values.end());
    sde.sigma = [](double, const DiscretePath&, int, const std::vector<double>& a,
                   std::vector<double>& out) { out[0] = a[0]; };
  } else if (sig_kind == "affine_clamped") {
    const double base = json_num(sig, "base");
    const double slope = json_num(sig, "slope");
    const double floor_v = json_num(sig, "floor");
    const double cap_v = json_num(sig, "cap");
    const std::vector<double> controls = sig.at("controls").get<std::vector<double>>();
    if (controls.empty()) throw InvalidInstance("config: sdg.sigma.controls empty");
    if (!(floor_v > 0.0 && cap_v >= floor_v))
      throw InvalidInstance("config: sdg.sigma needs 0 < floor <= cap");
    double cmin = controls[0], cmax = controls[0];
    for (const double c : controls) {
      if (!(c > 0.0)) throw InvalidInstance("config: sdg.sigma controls must be positive");
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
    for (const double c : controls) sde.a_disc.push_back({c});
    sde.sigma_min = floor_v * cmin;
    sde.sigma_max = cap_v * cmax;
    sde.sigma = [base, slope, floor_v, cap_v](double, const DiscretePath& dp, int i,
                                              const std::vector<double>& a,
                                              std::vector<double>& out) {
      const double raw = base + slope * std::abs(dp.value(i, 0));
      out[0] = std::clamp(raw, floor_v, cap_v) * a[0];
    };
  } else {
    throw InvalidInstance("config: unknown sigma kind '" + sig_kind + "'");
  }

  // jumps
  double jump_abs = 0.0, jump_factor = 0.0;
  const json& gam = sdg.at("gamma");
  const std::string gam_kind = json_kind(gam, "sdg.gamma");
  if (gam_kind == "constant") {
    const std::vector<std::vector<double>> jumps = json_matrix(gam.at("jumps"), "gamma.jumps");
    if (jumps.size() != sde.impulses.size())
      throw InvalidInstance("config: gamma.jumps must match the impulse menu");
    std::vector<double> sizes;
    for (const std::vector<double>& j : jumps) {
      if (j.size() != 1) throw InvalidInstance("config: gamma.jumps must be scalar");
      sizes.push_back(j[0]);
      jump_abs = std::max(jump_abs, std::abs(j[0]));
    }
    // identify the impulse by value match against the menu
    const std::vector<std::vector<double>> menu = sde.impulses;
    sde.gamma = [menu, sizes](double, const DiscretePath&, int, const std::vector<double>& beta,
                              std::vector<double>& out) {
      for (std::size_t b = 0; b < menu.size(); ++b)
        if (menu[b] == beta) {
          out[0] = sizes[b];
          return;
        }
      throw StructuralError("gamma: impulse value not in the menu");
    };
  } else if (gam_kind == "proportional") {
    const std::vector<double> factors = gam.at("factors").get<std::vector<double>>();
    if (factors.size() != sde.impulses.size())
      throw InvalidInstance("config: gamma.factors must match the impulse menu");
    for (const double f : factors) jump_factor = std::max(jump_factor, std::abs(f));
    const std::vector<std::vector<double>> menu = sde.impulses;
    sde.gamma = [menu, factors](double, const DiscretePath& dp, int i,
                                const std::vector<double>& beta, std::vector<double>& out) {
      for (std::size_t b = 0; b < menu.size(); ++b)
        if (menu[b] == beta) {
          out[0] = factors[b] * dp.value(i, 0);
          return;
        }
      throw StructuralError("gamma: impulse value not in the menu");
    };
  } else {
    throw InvalidInstance("config: unknown gamma kind '" + gam_kind + "'");
  }

  // running reward
  double run_a = 0.0, run_b = 0.0;
  const json& run = sdg.at("phi_run");
  const std::string run_kind = json_kind(run, "sdg.phi_run");
  if (run_kind == "zero") {
    sde.phi_run = [](double, const DiscretePath&, int) { return 0.0; };
  } else if (run_kind == "affine") {
    run_a = json_num(run, "a");
    run_b = json_num(run, "b");
    sde.phi_run = [run_a, run_b](double, const DiscretePath& dp, int i) {
      return run_a + run_b * dp.value(i, 0);
    };
  } else {
    throw InvalidInstance("config: unknown phi_run kind '" + run_kind + "'");
  }

  // terminal reward
  double psi_extra = 0.0;
  const json& psi = sdg.at("psi");
  const std::string psi_kind = json_kind(psi, "sdg.psi");
  if (psi_kind == "identity") {
    sde.psi = [](const DiscretePath& dp, int n) { return dp.value(n, 0); };
  } else if (psi_kind == "call") {
    const double strike = json_num(psi, "strike");
    psi_extra = std::abs(strike);
    sde.psi = [strike](const DiscretePath& dp, int n) {
      return std::max(dp.value(n, 0) - strike, 0.0);
    };
  } else if (psi_kind == "abs") {
    sde.psi = [](const DiscretePath& dp, int n) { return std::abs(dp.value(n, 0)); };
  } else {
    throw InvalidInstance("config: unknown psi kind '" + psi_kind + "'");
  }

  // intervention price
  double ell_min = 0.0, ell_max = 0.0;
  const json& ell = sdg.at("ell");
  const std::string ell_kind = json_kind(ell, "sdg.ell");
  if (ell_kind == "constant") {
    const double value = json_num(ell, "value");
    ell_min = ell_max = value;
    sde.ell = [value](double, const DiscretePath&, int, const std::vector<double>&) {
      return value;
    };
  } else if (ell_kind == "affine_abs") {
    const double base = json_num(ell, "base");
    const double slope = json_num(ell, "slope");
    const double cap_v = json_num(ell, "cap");
    if (!(slope >= 0.0 && base > 0.0 && cap_v >= base))
      throw InvalidInstance("config: sdg.ell needs base > 0, slope >= 0, cap >= base");
    ell_min = base;
    ell_max = cap_v;
    sde.ell = [base, slope, cap_v](double, const DiscretePath& dp, int i,
                                   const std::vector<double>&) {
      return std::min(cap_v, base + slope * std::abs(dp.value(i, 0)));
    };
  } else {
    throw InvalidInstance("config: unknown ell kind '" + ell_kind + "'");
  }

  sde.delta = json_num(sdg, "delta");
  sde.C0 = json_num(sdg, "c0");

  // analytic box bound at the config's own grid defaults
  const int n = json_int(sdg, "n");
  const double lambda = sdg.value("lambda", 1.0);
  const int k = sdg.value("impulse_budget", 2);
  if (n < 1 || !(lambda >= 1.0)) throw InvalidInstance("config: sdg needs n >= 1, lambda >= 1");
  const double h = lambda * sde.sigma_max * std::sqrt(sde.T / n);
  double reach = std::abs(sde.x0[0]) + n * h;
  reach = (reach + k * jump_abs) * std::pow(1.0 + jump_factor, (double)k);
  const double phi_bound = sde.T * (std::abs(run_a) + std::abs(run_b) * reach) +
                           reach + psi_extra;
  if (phi_bound > sde.C0)
    throw InvalidInstance("config: stated c0 " + format_double(sde.C0) +
                          " is below the derived reward bound " + format_double(phi_bound));
  if (ell_min < sde.delta)
    throw InvalidInstance("config: intervention price can fall below delta");
  if (ell_max > sde.C0)
    throw InvalidInstance("config: intervention price can exceed c0");
  return sde;
}

}  // namespace detail

inline LoadedInstance load_instance_json(const json& root) {
  LoadedInstance out;
  try {
    if (root.contains("sdg")) {
      out.has_sde = true;
      out.sde = detail::load_sde_instance(root, root.at("sdg"));
      out.defaults.n = detail::json_int(root.at("sdg"), "n");
      out.defaults.lambda = root.at("sdg").value("lambda", 1.0);
      out.defaults.k = root.at("sdg").value("impulse_budget", 2);
    } else {
      out.has_problem = true;
      out.problem = detail::load_lattice_problem(root);
      out.defaults.n = out.problem.lattice.grid.n;
      out.defaults.k = root.value("impulse_budget", 2);
    }
    out.defaults.seed = (std::uint64_t)root.value("seed", 0);
  } catch (const json::exception& e) {
    throw InvalidInstance(std::string("config: ") + e.what());
  }
  return out;
}

inline LoadedInstance load_instance_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInstance("config: cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInstance(std::string("config: parse error: ") + e.what());
  }
  return load_instance_json(root);
}

// Materialize the lattice problem a config describes, optionally overriding
// the grid resolution and spacing multiple for SDE configs.
inline ImpulseProblem instance_problem(const LoadedInstance& inst, int n_override = 0,
                                       double lambda_override = 0.0,
                                       std::uint64_t node_cap = kDefaultNodeCap) {
  if (inst.has_problem) return inst.problem;
  const int n = n_override > 0 ? n_override : inst.defaults.n;
  const double lambda = lambda_override > 0.0 ? lambda_override : inst.defaults.lambda;
  return build_lattice_problem(inst.sde, TimeGrid{n, inst.sde.T}, lambda, node_cap);
}

}  // namespace robimp
