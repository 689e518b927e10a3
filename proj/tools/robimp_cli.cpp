// Command-line front end: solve / verify / extract / sdg / stopping-check /
// tower-check over JSON instance configs.  Exit codes: 0 success, 1 a
// verification check failed, 2 invalid instance or usage, 3 enumeration or
// node caps exceeded, 4 discretization failure.

#include <CLI11.hpp>

#include <robimp/config.hpp>

#include <iostream>

namespace {

using namespace robimp;

struct CommonOpts {
  std::string config;
  int k = -1;
  double tol = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  std::string out;
  std::string field_path;
  std::string control_path;
  std::string strategy_path;
  int n_override = 0;
  double lambda_override = 0.0;
  std::uint64_t paths = 4000;
  std::uint64_t trials = 16;
};

std::uint64_t effective_seed(const CommonOpts& o, const LoadedInstance& inst) {
  return o.seed_set ? o.seed : inst.defaults.seed;
}

int effective_k(const CommonOpts& o, const LoadedInstance& inst) {
  return o.k >= 0 ? o.k : inst.defaults.k;
}

void emit(const json& j, const std::string& out_path) {
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) write_json(out_path, j);
}

int run_solve(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  const ImpulseProblem p = instance_problem(inst, o.n_override, o.lambda_override);
  const std::uint64_t seed = effective_seed(o, inst);

  ValueField field;
  int k_used = 0;
  double gap = 0.0;
  if (o.tol >= 0.0) {
    AdaptiveSolve sol = solve_adaptive(p, o.tol);
    field = std::move(sol.field);
    k_used = sol.k_used;
    gap = sol.certified_gap;
  } else {
    k_used = effective_k(o, inst);
    field = solve_truncated(p, k_used);
    gap = truncation_bound(p, k_used);
  }
  const double root = field.root();
  const double streamed = root_value_streaming(p, k_used, o.threads);
  if (streamed != root) {
    std::cerr << "solve: streaming root " << format_double(streamed)
              << " differs from the tabulated root " << format_double(root) << "\n";
    return 1;
  }
  const double residual = dpp_residual(p, field);
  emit(solve_summary_json(root, k_used, gap, residual, seed), o.out);
  if (!o.field_path.empty()) write_field_csv(o.field_path, field, seed);
  return residual <= kResidualTol ? 0 : 1;
}

int run_verify(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  const ImpulseProblem p = instance_problem(inst, o.n_override, o.lambda_override);
  const std::uint64_t seed = effective_seed(o, inst);
  const int k = effective_k(o, inst);

  json j;
  bool ok = true;
  const ValidationReport val = validate_instance(p, k);
  j["instance_valid"] = val.pass;
  ok = ok && val.pass;

  ValueField field = solve_truncated(p, k);
  j["root_value"] = field.root();
  const double residual = dpp_residual(p, field);
  j["dpp_residual"] = residual;
  ok = ok && residual <= kResidualTol;

  const double stop_res = dpp_stopping_form_residual(p, field, InterventionHistory{});
  j["stopping_form_residual"] = stop_res;
  ok = ok && stop_res <= kResidualTol;

  const GameValueReport game = check_game_value(p, k, EnumerationCaps{});
  j["game"] = game_value_json(game, k, seed);
  ok = ok && game.pass;

  const SaddleReport saddle = verify_saddle(p, field, EnumerationCaps{});
  j["saddle_pass"] = saddle.pass;
  ok = ok && saddle.pass;

  const UniquenessReport uniq = uniqueness_probe(p, field, (int)o.trials, seed);
  j["uniqueness_pass"] = uniq.pass;
  ok = ok && uniq.pass;

  if (!o.field_path.empty()) {
    const LoadedField loaded = read_field_csv(o.field_path);
    bool same = loaded.field.budget == field.budget &&
                loaded.field.table.size() == field.table.size();
    double drift = 0.0;
    if (same)
      for (const auto& [key, value] : field.table) {
        const auto it = loaded.field.table.find(key);
        if (it == loaded.field.table.end()) {
          same = false;
          break;
        }
        drift = std::max(drift, std::abs(it->second - value));
      }
    const double loaded_res = same ? dpp_residual(p, loaded.field) : 1.0;
    j["field_matches"] = same && drift <= kResidualTol && loaded_res <= kResidualTol;
    j["field_drift"] = drift;
    ok = ok && same && drift <= kResidualTol && loaded_res <= kResidualTol;
  }

  j["pass"] = ok;
  j["seed"] = seed;
  emit(j, o.out);
  return ok ? 0 : 1;
}

int run_extract(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  const ImpulseProblem p = instance_problem(inst, o.n_override, o.lambda_override);
  const std::uint64_t seed = effective_seed(o, inst);
  const int k = effective_k(o, inst);

  const ValueField field = solve_truncated(p, k);
  const ImpulseControlRule control = extract_optimal_control(p, field);
  const AdversaryStrategyRule strategy = extract_worst_case_strategy(p, field);

  const double pair_value = evaluate_pair(p, control, strategy, k);
  json j;
  j["root_value"] = field.root();
  j["pair_value"] = pair_value;
  j["max_interventions"] = max_interventions_on_paths(p, control, k);
  j["seed"] = seed;
  const bool ok = std::abs(pair_value - field.root()) <= kValueTol;
  j["pass"] = ok;
  emit(j, o.out);

  if (!o.field_path.empty()) write_field_csv(o.field_path, field, seed);
  if (!o.control_path.empty()) write_control_csv(o.control_path, p, control, k, seed);
  if (!o.strategy_path.empty()) write_strategy_csv(o.strategy_path, p, strategy, k, seed);
  return ok ? 0 : 1;
}

int run_sdg(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  if (!inst.has_sde) throw InvalidInstance("sdg: config has no sdg section");
  const int n = o.n_override > 0 ? o.n_override : inst.defaults.n;
  const double lambda = o.lambda_override > 0.0 ? o.lambda_override : inst.defaults.lambda;
  const TimeGrid grid{n, inst.sde.T};
  const ImpulseProblem p = build_lattice_problem(inst.sde, grid, lambda);
  const std::uint64_t seed = effective_seed(o, inst);
  const int k = effective_k(o, inst);

  const ValueField field = solve_truncated(p, k);
  const ImpulseControlRule control = extract_optimal_control(p, field);
  const AdversaryStrategyRule strategy = extract_worst_case_strategy(p, field);
  const McReport mc =
      mc_evaluate(inst.sde, grid, sim_replay_control(p.lattice, control),
                  sim_replay_strategy(p.lattice, strategy), k, o.paths, seed, o.threads);

  json j;
  j["root_value"] = field.root();
  j["mc"] = mc_json(mc);
  j["n"] = n;
  j["lambda"] = lambda;
  j["k"] = k;
  emit(j, o.out);
  if (!o.field_path.empty()) write_field_csv(o.field_path, field, seed);
  return 0;
}

int run_stopping_check(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  const ImpulseProblem p = instance_problem(inst, o.n_override, o.lambda_override);
  const std::uint64_t seed = effective_seed(o, inst);
  const int k = effective_k(o, inst);

  const ValueField field = solve_truncated(p, k);
  const double stop_res = dpp_stopping_form_residual(p, field, InterventionHistory{});

  // the embedded stopping problem, solved directly
  const LatticeModel& m = p.lattice;
  ObstacleProcess obstacle;
  obstacle.values.resize((std::size_t)m.grid.n + 1);
  const InterventionHistory empty_hist;
  for (int depth = 0; depth <= m.grid.n; ++depth) {
    obstacle.values[(std::size_t)depth].resize((std::size_t)m.nodes_at(depth));
    for (std::uint64_t idx = 0; idx < m.nodes_at(depth); ++idx) {
      const NodeRef nd{depth, idx};
      if (depth == m.grid.n) {
        std::vector<double> buf;
        node_path(m, nd, buf);
        obstacle.values[(std::size_t)depth][idx] =
            p.phi(view_of(buf, depth + 1, m.dim), empty_hist);
      } else {
        const std::optional<ObstacleChoice> ch = intervention_obstacle(p, field, nd, empty_hist);
        obstacle.values[(std::size_t)depth][idx] =
            ch ? ch->value : std::numeric_limits<double>::infinity();
      }
    }
  }
  const StoppingSolution sol = solve_optimal_stopping(m, p.kernels, empty_hist, obstacle);
  const double slack = stopping_supermartingale_slack(m, p.kernels, empty_hist, sol);
  const double gap = stopping_extraction_gap(m, sol, p.kernels, empty_hist, obstacle);

  json j;
  j["stopping_form_residual"] = stop_res;
  j["stopping_root"] = sol.root();
  j["supermartingale_slack"] = slack;
  j["extraction_gap"] = gap;
  j["seed"] = seed;
  const bool ok = stop_res <= kResidualTol && slack <= kResidualTol && gap <= kValueTol;
  j["pass"] = ok;
  emit(j, o.out);
  return ok ? 0 : 1;
}

int run_tower_check(const CommonOpts& o) {
  const LoadedInstance inst = load_instance_file(o.config);
  const ImpulseProblem p = instance_problem(inst, o.n_override, o.lambda_override);
  const std::uint64_t seed = effective_seed(o, inst);
  const LatticeModel& m = p.lattice;
  const CounterRng rng(seed, 0x746f776572ULL);

  double worst = 0.0;
  std::uint64_t checks = 0;
  for (std::uint64_t trial = 0; trial < o.trials; ++trial) {
    const int s = m.grid.n == 0 ? 0 : (int)(rng.bits(trial, 0) % (std::uint64_t)(m.grid.n + 1));
    const int t = s + (m.grid.n == s ? 0 : (int)(rng.bits(trial, 1) %
                                                 (std::uint64_t)(m.grid.n - s + 1)));
    const NodeRef nd{s, rng.bits(trial, 2) % m.nodes_at(s)};
    NodeFunctional f;
    f.depth = m.grid.n;
    f.values.resize((std::size_t)m.nodes_at(m.grid.n));
    for (std::size_t i = 0; i < f.values.size(); ++i)
      f.values[i] = 2.0 * rng.uniform(trial, 3 + (std::uint64_t)i) - 1.0;
    const TowerReport rep =
        tower_check(m, p.kernels, InterventionHistory{}, nd, t, f);
    worst = std::max(worst, rep.discrepancy);
    ++checks;
  }
  json j;
  j["trials"] = checks;
  j["worst_discrepancy"] = worst;
  j["seed"] = seed;
  const bool ok = worst <= kResidualTol;
  j["pass"] = ok;
  emit(j, o.out);
  return ok ? 0 : 1;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_config = true) {
  auto* copt = cmd->add_option("--config", o.config, "instance config (json)");
  if (needs_config) copt->required();
  cmd->add_option("--k", o.k, "intervention budget");
  cmd->add_option("--seed", o.seed, "seed recorded in artifacts")->each([&o](std::string) {
    o.seed_set = true;
  });
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_option("--out", o.out, "write the json summary here");
  cmd->add_option("--field", o.field_path, "value field csv path");
  cmd->add_option("--n", o.n_override, "grid steps override (sde configs)");
  cmd->add_option("--lambda", o.lambda_override, "lattice spacing multiple override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robimp: robust impulse control on scenario lattices"};
  app.require_subcommand(1);

  CommonOpts o;
  CLI::App* solve = app.add_subcommand("solve", "truncated value recursion");
  add_common(solve, o);
  solve->add_option("--tol", o.tol, "adaptive truncation tolerance");

  CLI::App* verify = app.add_subcommand("verify", "full verification battery");
  add_common(verify, o);
  verify->add_option("--trials", o.trials, "uniqueness probe trials");

  CLI::App* extract = app.add_subcommand("extract", "optimal control and adverse strategy");
  add_common(extract, o);
  extract->add_option("--control", o.control_path, "control table csv path");
  extract->add_option("--strategy", o.strategy_path, "strategy table csv path");

  CLI::App* sdg = app.add_subcommand("sdg", "compile an sde game and cross-check by simulation");
  add_common(sdg, o);
  sdg->add_option("--paths", o.paths, "monte carlo paths");

  CLI::App* stopping = app.add_subcommand("stopping-check", "optimal stopping reduction checks");
  add_common(stopping, o);

  CLI::App* tower = app.add_subcommand("tower-check", "nested vs direct expectation checks");
  add_common(tower, o);
  tower->add_option("--trials", o.trials, "random tower checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (solve->parsed()) return run_solve(o);
    if (verify->parsed()) return run_verify(o);
    if (extract->parsed()) return run_extract(o);
    if (sdg->parsed()) return run_sdg(o);
    if (stopping->parsed()) return run_stopping_check(o);
    if (tower->parsed()) return run_tower_check(o);
  } catch (const InstanceTooLarge& e) {
    std::cerr << "caps: " << e.what() << "\n";
    return 3;
  } catch (const DiscretizationError& e) {
    std::cerr << "discretization: " << e.what() << "\n";
    return 4;
  } catch (const InvalidInstance& e) {
    std::cerr << "invalid instance: " << e.what() << "\n";
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "structural: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
