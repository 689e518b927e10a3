#include <catch2/catch_amalgamated.hpp>

#include <robimp/sdg.hpp>

using namespace robimp;

namespace {

// driftless scalar diffusion with a constant volatility menu, constant
// downward jumps, terminal-state payoff, and a flat intervention price
SdeInstance make_sde(std::vector<double> vols, double jump, double price,
                     double x0 = 0.0) {
  SdeInstance sde;
  sde.dim = 1;
  sde.T = 1.0;
  sde.x0 = {x0};
  for (const double s : vols) sde.a_disc.push_back({s});
  sde.impulses = {{-1.0}};
  sde.sigma_min = *std::min_element(vols.begin(), vols.end());
  sde.sigma_max = *std::max_element(vols.begin(), vols.end());
  sde.sigma = [](double, const DiscretePath&, int, const std::vector<double>& a,
                 std::vector<double>& out) { out[0] = a[0]; };
  sde.gamma = [jump](double, const DiscretePath&, int, const std::vector<double>&,
                     std::vector<double>& out) { out[0] = jump; };
  sde.phi_run = [](double, const DiscretePath&, int) { return 0.0; };
  sde.psi = [](const DiscretePath& dp, int n) { return dp.value(n, 0); };
  sde.ell = [price](double, const DiscretePath&, int, const std::vector<double>&) {
    return price;
  };
  sde.delta = 1.0;
  sde.C0 = 6.0;
  return sde;
}

}  // namespace

TEST_CASE("discrete paths overlay jumps on the continuous part") {
  DiscretePath dp;
  dp.dim = 1;
  dp.x = {1.0, 2.0, 3.0};
  dp.jumps.push_back({1, {-0.5}});
  CHECK(dp.value(0, 0) == 1.0);
  CHECK(dp.value(1, 0) == 1.5);
  CHECK(dp.value(2, 0) == 2.5);
  CHECK(dp.base(2, 0) == 3.0);
}

TEST_CASE("impulse operator applies jumps sequentially on the jumped path") {
  // proportional jumps halve the running state: 4 -> 2 -> 1
  SdeInstance sde = make_sde({0.2}, -1.0, 2.0, 4.0);
  sde.gamma = [](double, const DiscretePath& dp, int i, const std::vector<double>&,
                 std::vector<double>& out) { out[0] = -0.5 * dp.value(i, 0); };
  const TimeGrid grid{2, 1.0};

  DiscretePath base;
  base.dim = 1;
  base.x = {4.0, 4.0, 4.0};
  InterventionHistory v;
  v = with_entry(v, 0, 0);
  v = with_entry(v, 0, 0);

  const DiscretePath jumped = impulse_operator(sde, grid, base, v);
  REQUIRE(jumped.jumps.size() == 2);
  CHECK(jumped.jumps[0].dx[0] == -2.0);
  CHECK(jumped.jumps[1].dx[0] == -1.0);
  CHECK(jumped.value(0, 0) == 1.0);
  CHECK(jumped.value(2, 0) == 1.0);
}

TEST_CASE("compiled rewards are a left-endpoint sum plus terminal payoff") {
  SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  sde.phi_run = [](double, const DiscretePath& dp, int i) { return dp.value(i, 0); };
  const TimeGrid grid{2, 1.0};
  const CompiledCosts costs = make_costs(sde, grid);

  const std::vector<double> pts = {1.0, 2.0, 3.0};
  const PathView pv = view_of(pts, 3, 1);
  // (1 + 2) * 0.5 + terminal 3
  CHECK(costs.phi(pv, InterventionHistory{}) == 4.5);

  // with a jump at step 1 the sum sees the jumped path: (1 + 1) * 0.5 + 2
  InterventionHistory v;
  v = with_entry(v, 1, 0);
  CHECK(costs.phi(pv, v) == 3.0);
}

TEST_CASE("intervention price sees the pre-jump state") {
  SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  sde.ell = [](double, const DiscretePath& dp, int i, const std::vector<double>&) {
    return 1.0 + std::abs(dp.value(i, 0));
  };
  const TimeGrid grid{2, 1.0};
  const CompiledCosts costs = make_costs(sde, grid);

  const std::vector<double> pts = {1.0, 2.0, 3.0};
  const PathView pv = view_of(pts, 3, 1);
  InterventionHistory v;
  v = with_entry(v, 0, 0);  // first jump at t0: price sees x = 1
  CHECK(costs.cost(pv, v) == 2.0);

  v = with_entry(v, 1, 0);  // second jump at t1: price sees 2 - 1 = 1
  CHECK(costs.cost(pv, v) == 2.0);

  InterventionHistory w;
  w = with_entry(w, 1, 0);  // single jump at t1: price sees x = 2
  CHECK(costs.cost(pv, w) == 3.0);
}

TEST_CASE("trinomial kernels hit the stated moments") {
  const SdeInstance sde = make_sde({0.15, 0.3}, -1.0, 2.0);
  const TimeGrid grid{4, 1.0};

  const ImpulseProblem unit = build_lattice_problem(sde, grid, 1.0);
  KernelSet ks;
  unit.kernels(NodeRef{0, 0}, InterventionHistory{}, ks);
  REQUIRE(ks.size() == 2);
  // p = sigma^2 / (2 lambda^2 sigma_max^2): 0.125 and 0.5
  CHECK_THAT(ks.kernels[0][0], Catch::Matchers::WithinAbs(0.125, 1e-15));
  CHECK_THAT(ks.kernels[0][1], Catch::Matchers::WithinAbs(0.75, 1e-15));
  CHECK(ks.kernels[1][0] == 0.5);
  CHECK(ks.kernels[1][1] == 0.0);

  const ImpulseProblem wide = build_lattice_problem(sde, grid, std::sqrt(2.0));
  wide.kernels(NodeRef{0, 0}, InterventionHistory{}, ks);
  CHECK_THAT(ks.kernels[1][0], Catch::Matchers::WithinAbs(0.25, 1e-15));
  CHECK_THAT(ks.kernels[1][1], Catch::Matchers::WithinAbs(0.5, 1e-15));

  const KernelMomentReport rep = trinomial_moment_report(sde, grid, wide, 2);
  CHECK(rep.worst_mean <= 1e-12);
  CHECK(rep.worst_variance_gap <= 1e-12);
  CHECK(rep.kernels_checked > 0);
}

TEST_CASE("the spacing condition is enforced") {
  const SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  CHECK_THROWS_AS(build_lattice_problem(sde, TimeGrid{4, 1.0}, 0.9), DiscretizationError);

  SdeInstance flat = sde;
  flat.sigma_min = 0.0;
  CHECK_THROWS_AS(build_lattice_problem(flat, TimeGrid{4, 1.0}, 1.0), InvalidInstance);

  SdeInstance vec = sde;
  vec.dim = 2;
  CHECK_THROWS_AS(build_lattice_problem(vec, TimeGrid{4, 1.0}, 1.0), InvalidInstance);
}

TEST_CASE("simulation is a pure function of seed and path id") {
  const SdeInstance sde = make_sde({0.15, 0.3}, -1.0, 2.0);
  const TimeGrid grid{6, 1.0};
  const SimImpulseRule wait = sim_wait_everywhere();
  const SimClassicalRule ctl = sim_fixed_control(1);

  const SimResult a = euler_simulate(sde, grid, wait, ctl, 2, 99, 5);
  const SimResult b = euler_simulate(sde, grid, wait, ctl, 2, 99, 5);
  CHECK(a.path.x == b.path.x);
  CHECK(a.cost == b.cost);

  const SimResult c = euler_simulate(sde, grid, wait, ctl, 2, 99, 6);
  CHECK(a.path.x != c.path.x);
}

TEST_CASE("simulated impulses pay before jumping and respect the budget") {
  SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  sde.ell = [](double, const DiscretePath& dp, int i, const std::vector<double>&) {
    return 1.0 + std::abs(dp.value(i, 0));  // price reveals the pre-jump state
  };
  const TimeGrid grid{2, 1.0};

  SimImpulseRule once = [](int i, const DiscretePath&,
                           const InterventionHistory& v) -> std::optional<int> {
    if (i == 0 && v.empty()) return 0;
    return std::nullopt;
  };
  const SimResult r = euler_simulate(sde, grid, once, sim_fixed_control(0), 2, 1, 0);
  REQUIRE(r.hist.size() == 1);
  REQUIRE(r.path.jumps.size() == 1);
  // x0 = 0: price = 1 + 0, terminal payoff = x_T
  CHECK_THAT(r.cost - r.path.value(2, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));

  SimImpulseRule greedy = [](int, const DiscretePath&,
                             const InterventionHistory&) -> std::optional<int> { return 0; };
  const SimResult g = euler_simulate(sde, grid, greedy, sim_fixed_control(0), 3, 1, 0);
  CHECK(g.hist.size() == 3);  // the budget stops the loop, no throw

  SimImpulseRule bogus = [](int, const DiscretePath&,
                            const InterventionHistory&) -> std::optional<int> { return 4; };
  CHECK_THROWS_AS(euler_simulate(sde, grid, bogus, sim_fixed_control(0), 1, 1, 0),
                  StructuralError);
}

TEST_CASE("monte carlo mean is independent of the thread count") {
  const SdeInstance sde = make_sde({0.15, 0.3}, -1.0, 2.0);
  const TimeGrid grid{4, 1.0};
  const SimImpulseRule wait = sim_wait_everywhere();
  const SimClassicalRule ctl = sim_fixed_control(1);

  const McReport one = mc_evaluate(sde, grid, wait, ctl, 2, 3000, 17, 1);
  const McReport four = mc_evaluate(sde, grid, wait, ctl, 2, 3000, 17, 4);
  const McReport eight = mc_evaluate(sde, grid, wait, ctl, 2, 3000, 17, 8);
  CHECK(one.mean == four.mean);
  CHECK(one.se == four.se);
  CHECK(one.mean == eight.mean);
  CHECK(one.se == eight.se);
}

TEST_CASE("martingale instances tie the lattice root to the simulator") {
  const SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  const TimeGrid grid{8, 1.0};
  const ImpulseProblem p = build_lattice_problem(sde, grid, 1.0);

  const ValueField field = solve_truncated(p, 2);
  // expensive jumps never pay; pure martingale, zero up to summation rounding
  CHECK(std::abs(field.root()) <= 1e-12);

  const ImpulseControlRule u = extract_optimal_control(p, field);
  const AdversaryStrategyRule q = extract_worst_case_strategy(p, field);
  const McReport mc = mc_evaluate(sde, grid, sim_replay_control(p.lattice, u),
                                  sim_replay_strategy(p.lattice, q), 2, 20000, 5, 4);
  CHECK(std::abs(mc.mean - field.root()) <= 3.0 * mc.se);
}

TEST_CASE("path quantization picks the nearest branch, ties to the lower index") {
  const SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  const TimeGrid grid{2, 1.0};
  const ImpulseProblem p = build_lattice_problem(sde, grid, 1.0);
  const double h = 0.2 * std::sqrt(0.5);

  DiscretePath dp;
  dp.dim = 1;
  dp.x = {0.0, 0.9 * h, 0.9 * h - 0.04 * h};
  const NodeRef nd = quantize_to_node(p.lattice, dp, 2);
  CHECK(nd.depth == 2);
  std::vector<int> digits;
  node_digits(nd, 3, digits);
  CHECK(digits == std::vector<int>{0, 1});  // up then flat

  DiscretePath tie;
  tie.dim = 1;
  tie.x = {0.0, 0.5 * h};  // equidistant between up and flat
  node_digits(quantize_to_node(p.lattice, tie, 1), 3, digits);
  CHECK(digits == std::vector<int>{0});
}

TEST_CASE("paired-noise gaps scale down with the perturbation") {
  const SdeInstance sde = make_sde({0.2}, -1.0, 2.0);
  const TimeGrid grid{8, 1.0};

  const std::vector<double> prefix = {0.0, 0.1, 0.2};
  const std::vector<double> bump = {0.0, 0.2, 0.4};
  InterventionHistory v;
  v = with_entry(v, 4, 0);

  const StabilityReport rep = stability_probe(sde, grid, prefix, bump, v, {6},
                                              {1.0, 0.5, 0.25}, 0, 500, 21);
  REQUIRE(rep.estimates.size() == 3);
  CHECK(rep.strictly_decreasing);
  // constant sigma and constant jumps: the coupled gap is exactly s * 0.4
  // away from the jump windows
  CHECK_THAT(rep.estimates[0], Catch::Matchers::WithinAbs(0.4, 1e-12));
  CHECK_THAT(rep.estimates[1], Catch::Matchers::WithinAbs(0.2, 1e-12));
  CHECK_THAT(rep.estimates[2], Catch::Matchers::WithinAbs(0.1, 1e-12));
}

TEST_CASE("refinement gaps contract on a convex payoff") {
  SdeInstance sde = make_sde({0.15, 0.3}, -0.5, 1.0);
  sde.psi = [](const DiscretePath& dp, int n) { return std::max(dp.value(n, 0), 0.0); };
  const RefinementReport rep = refinement_report(sde, 1.0, 0, {2, 4, 8}, 2);
  REQUIRE(rep.roots.size() == 3);
  REQUIRE(rep.gaps.size() == 2);
  CHECK(rep.gaps[1] <= 1.25 * rep.gaps[0] + 1e-12);
  for (const double r : rep.roots) CHECK(r > 0.0);
}
