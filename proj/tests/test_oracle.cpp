#include <catch2/catch_amalgamated.hpp>

#include <robimp/dpp.hpp>
#include <robimp/oracle.hpp>

#include "instance_gen.hpp"

using namespace robimp;

namespace {

ImpulseProblem t1_two_marks() {
  ImpulseProblem p = gen::make_t1();
  p.impulses = {{-2.0}, {1.5}};
  p.phi = [](const PathView& pv, const InterventionHistory& v) {
    double out = pv.terminal(0);
    if (!v.empty()) out += v.entries.front().impulse == 0 ? -2.0 : 1.5;
    return out;
  };
  return p;
}

}  // namespace

TEST_CASE("state index covers decision points in scan order") {
  const ImpulseProblem p = gen::make_t1();
  const StateIndex idx = build_state_index(p, 1, EnumerationCaps{});
  REQUIRE(idx.size() == 2);
  CHECK(idx.hists[0].empty());
  CHECK(idx.hists[1].size() == 1);
  CHECK(idx.at(NodeRef{0, 0}, InterventionHistory{}) == 0);
  CHECK_THROWS_AS(idx.at(NodeRef{1, 0}, InterventionHistory{}), StructuralError);
}

TEST_CASE("control and strategy counts on pinned instances") {
  const ImpulseProblem p = gen::make_t1();
  const StateIndex idx = build_state_index(p, 1, EnumerationCaps{});
  std::uint64_t controls = 0;
  enumerate_controls(p, idx, 1, EnumerationCaps{},
                     [&controls](const std::vector<signed char>&) { ++controls; });
  CHECK(controls == 2);
  std::vector<int> radix;
  CHECK(count_strategies(p, idx, EnumerationCaps{}, radix) == 4);

  const ImpulseProblem q = t1_two_marks();
  const StateIndex idx2 = build_state_index(q, 1, EnumerationCaps{});
  REQUIRE(idx2.size() == 3);
  std::uint64_t controls2 = 0;
  enumerate_controls(q, idx2, 1, EnumerationCaps{},
                     [&controls2](const std::vector<signed char>&) { ++controls2; });
  CHECK(controls2 == 3);
  CHECK(count_strategies(q, idx2, EnumerationCaps{}, radix) == 8);
}

TEST_CASE("enumerated controls are distinct behaviors") {
  const ImpulseProblem p = t1_two_marks();
  const StateIndex idx = build_state_index(p, 1, EnumerationCaps{});
  std::vector<std::vector<signed char>> tables;
  enumerate_controls(p, idx, 1, EnumerationCaps{},
                     [&tables](const std::vector<signed char>& act) { tables.push_back(act); });
  REQUIRE(tables.size() == 3);
  for (std::size_t i = 0; i < tables.size(); ++i)
    for (std::size_t j = i + 1; j < tables.size(); ++j) CHECK(tables[i] != tables[j]);
}

TEST_CASE("pinned game value certification") {
  const ImpulseProblem p = gen::make_t1();
  const GameValueReport rep = check_game_value(p, 1, EnumerationCaps{});
  CHECK(rep.pass);
  CHECK_THAT(rep.upper, Catch::Matchers::WithinAbs(-0.2, 1e-9));
  CHECK_THAT(rep.lower, Catch::Matchers::WithinAbs(-0.2, 1e-9));
  CHECK_THAT(rep.dp_value, Catch::Matchers::WithinAbs(-0.2, 1e-9));
  CHECK(rep.n_controls == 2);
  CHECK(rep.n_strategies == 4);
}

TEST_CASE("game value holds across seeded shapes") {
  int done = 0;
  for (const gen::GameShape& shape : gen::game_shapes()) {
    gen::GenCfg cfg = shape.cfg;
    cfg.seed = 300 + (std::uint64_t)done;
    const ImpulseProblem p = gen::make_problem(cfg);
    const GameValueReport rep = check_game_value(p, shape.k, EnumerationCaps{});
    INFO("shape " << done << ": n=" << cfg.n << " kernels=" << cfg.max_kernels
                  << " impulses=" << cfg.n_impulses << " k=" << shape.k);
    CHECK(rep.pass);
    CHECK(std::abs(rep.upper - rep.lower) <= 1e-9);
    CHECK(std::abs(rep.upper - rep.dp_value) <= 1e-9);
    ++done;
  }
  CHECK(done == 6);
}

TEST_CASE("enumeration caps stop oversized searches") {
  gen::GenCfg cfg;
  cfg.n = 2;
  cfg.branch_count = 2;
  cfg.max_kernels = 2;
  cfg.n_impulses = 2;
  cfg.fixed_kernel_count = true;
  cfg.seed = 9;
  const ImpulseProblem p = gen::make_problem(cfg);
  // strategy space is astronomically large at k = 2; the cap must fire fast
  CHECK_THROWS_AS(brute_lower_value(p, 2, EnumerationCaps{}), InstanceTooLarge);

  EnumerationCaps tiny;
  tiny.max_nodes = 2;
  CHECK_THROWS_AS(build_state_index(gen::make_t1(), 1, tiny), InstanceTooLarge);

  EnumerationCaps few;
  few.max_controls = 1;
  const StateIndex idx = build_state_index(gen::make_t1(), 1, EnumerationCaps{});
  CHECK_THROWS_AS(enumerate_controls(gen::make_t1(), idx, 1, few,
                                     [](const std::vector<signed char>&) {}),
                  InstanceTooLarge);
}

TEST_CASE("saddle verification on seeded shapes") {
  int done = 0;
  for (const gen::GameShape& shape : gen::game_shapes()) {
    gen::GenCfg cfg = shape.cfg;
    cfg.seed = 700 + (std::uint64_t)done;
    const ImpulseProblem p = gen::make_problem(cfg);
    const ValueField field = solve_truncated(p, shape.k);
    const SaddleReport rep = verify_saddle(p, field, EnumerationCaps{});
    INFO("shape " << done);
    CHECK(rep.pass);
    CHECK(std::abs(rep.pair_value - rep.root) <= 1e-9);
    CHECK(rep.control_best >= rep.root - 1e-9);
    CHECK(rep.measure_best <= rep.root + 1e-9);
    ++done;
  }
}

TEST_CASE("uniqueness probe flags every planted perturbation") {
  const ImpulseProblem p = gen::make_t1();
  const ValueField field = solve_truncated(p, 1);
  const UniquenessReport rep = uniqueness_probe(p, field, 50, 2026);
  CHECK(rep.pass);
  CHECK(rep.trials == 50);
  CHECK(rep.detected == 50);
  CHECK(rep.base_residual == 0.0);

  for (std::uint64_t seed = 31; seed <= 34; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 2;
    cfg.seed = seed;
    const ImpulseProblem q = gen::make_problem(cfg);
    const ValueField f = solve_truncated(q, 2);
    CHECK(uniqueness_probe(q, f, 25, seed).pass);
  }
}

TEST_CASE("classical backward induction agrees on single-kernel instances") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 2 + (int)(seed % 2);
    cfg.branch_count = 2 + (int)(seed % 2);
    cfg.max_kernels = 1;
    cfg.n_impulses = 1 + (int)(seed % 2);
    cfg.seed = 500 + seed;
    const ImpulseProblem p = gen::make_problem(cfg);
    const int k = 1 + (int)(seed % 3);
    const double dp = solve_truncated(p, k).root();
    const double classical = classical_impulse_dp_value(p, k);
    CHECK(std::abs(dp - classical) <= 1e-12);
  }

  // refuses genuinely ambiguous instances
  CHECK_THROWS_AS(classical_impulse_dp_value(gen::make_t1(), 1), InvalidInstance);
}
