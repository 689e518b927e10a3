#include <catch2/catch_amalgamated.hpp>

#include <robimp/dpp.hpp>

#include "instance_gen.hpp"

using namespace robimp;

TEST_CASE("pinned roots across budgets") {
  const ImpulseProblem p = gen::make_t1();
  const double expected[4] = {0.8, -0.2, -0.2, -0.2};
  for (int k = 0; k <= 3; ++k) {
    const ValueField field = solve_truncated(p, k);
    CHECK_THAT(field.root(), Catch::Matchers::WithinAbs(expected[k], 1e-9));
  }
  // the budget binds at k = 0 and saturates from k = 1 on
  CHECK(solve_truncated(p, 0).root() != solve_truncated(p, 1).root());
  CHECK(solve_truncated(p, 1).root() == solve_truncated(p, 2).root());
}

TEST_CASE("field lookups carry full state") {
  const ImpulseProblem p = gen::make_t1();
  const ValueField field = solve_truncated(p, 1);

  InterventionHistory v;
  v = with_entry(v, 0, 0);
  // post-intervention value at the root: E^{0.9} over phi(., one impulse)
  CHECK_THAT(field.at(NodeRef{0, 0}, v), Catch::Matchers::WithinAbs(-1.2, 1e-9));
  CHECK_THAT(field.at(NodeRef{1, 0}, v), Catch::Matchers::WithinAbs(-1.0, 1e-9));
  CHECK_THAT(field.at(NodeRef{1, 1}, v), Catch::Matchers::WithinAbs(-3.0, 1e-9));

  InterventionHistory unknown;
  unknown = with_entry(unknown, 0, 0);
  unknown = with_entry(unknown, 0, 0);
  CHECK_THROWS_AS(field.at(NodeRef{0, 0}, unknown), InvalidInstance);
}

TEST_CASE("memo cap is enforced") {
  const ImpulseProblem p = gen::make_t1();
  CHECK_THROWS_AS(solve_truncated(p, 2, 3), InstanceTooLarge);
}

TEST_CASE("residual vanishes on freshly solved fields and flags tampering") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 2 + (int)(seed % 2);
    cfg.branch_count = 2;
    cfg.max_kernels = 2;
    cfg.n_impulses = 1 + (int)(seed % 2);
    cfg.seed = seed;
    const ImpulseProblem p = gen::make_problem(cfg);
    const ValueField field = solve_truncated(p, 2);
    CHECK(dpp_residual(p, field) == 0.0);

    ValueField bent = field;
    bent.table.begin()->second += 0.125;
    CHECK(dpp_residual(p, bent) >= 0.125 - 1e-9);
  }
}

TEST_CASE("solved field solves the embedded stopping problem") {
  const ImpulseProblem t1 = gen::make_t1();
  const ValueField f1 = solve_truncated(t1, 1);
  CHECK(dpp_stopping_form_residual(t1, f1, InterventionHistory{}) == 0.0);

  for (std::uint64_t seed = 11; seed <= 16; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 2;
    cfg.branch_count = 2;
    cfg.max_kernels = 2;
    cfg.n_impulses = 2;
    cfg.seed = seed;
    const ImpulseProblem p = gen::make_problem(cfg);
    const ValueField field = solve_truncated(p, 2);
    CHECK(dpp_stopping_form_residual(p, field, InterventionHistory{}) == 0.0);

    // also from a non-empty root history
    InterventionHistory v;
    v = with_entry(v, 0, 0);
    CHECK(dpp_stopping_form_residual(p, field, v) == 0.0);
  }
}

TEST_CASE("budget monotonicity and the truncation bound") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 2;
    cfg.branch_count = 2;
    cfg.max_kernels = 2;
    cfg.n_impulses = 1;
    cfg.seed = 40 + seed;
    const ImpulseProblem p = gen::make_problem(cfg);
    REQUIRE(p.k_hard() == 8);  // ceil(2 * 3 / 1) + 2

    const TruncationReport rep = truncation_monotonicity_report(p, p.k_hard());
    CHECK(rep.monotone);
    CHECK(rep.bounded);
    REQUIRE(rep.roots.size() == (std::size_t)p.k_hard() + 1);
    for (std::size_t k = 0; k < rep.roots.size(); ++k) {
      CHECK(rep.gaps[k] >= -1e-12);
      CHECK(rep.gaps[k] <= rep.bounds[k] + 1e-9);
    }
  }
}

TEST_CASE("adaptive solve stops at the certified budget") {
  const ImpulseProblem p = gen::make_t1();

  const AdaptiveSolve coarse = solve_adaptive(p, 36.0);
  CHECK(coarse.k_used == 0);
  CHECK_THAT(coarse.certified_gap, Catch::Matchers::WithinAbs(36.0, 1e-12));

  const AdaptiveSolve fine = solve_adaptive(p, 1e-9);
  CHECK(fine.k_used == 2);  // consecutive roots stabilize at k = 2
  CHECK_THAT(fine.field.root(), Catch::Matchers::WithinAbs(-0.2, 1e-9));
  CHECK(fine.k_used <= p.k_hard());
  REQUIRE(fine.roots.size() == (std::size_t)fine.k_used + 1);
}

TEST_CASE("streaming root equals the tabulated root bit for bit") {
  for (std::uint64_t seed = 21; seed <= 24; ++seed) {
    gen::GenCfg cfg;
    cfg.n = 3;
    cfg.branch_count = 2;
    cfg.max_kernels = 2;
    cfg.n_impulses = 1;
    cfg.seed = seed;
    const ImpulseProblem p = gen::make_problem(cfg);
    const double tabulated = solve_truncated(p, 2).root();
    for (const int threads : {1, 2, 8})
      CHECK(root_value_streaming(p, 2, threads) == tabulated);
  }
}

TEST_CASE("obstacle evaluation respects the remaining budget") {
  const ImpulseProblem p = gen::make_t1();
  const ValueField field = solve_truncated(p, 1);

  const auto at_root = intervention_obstacle(p, field, NodeRef{0, 0}, InterventionHistory{});
  REQUIRE(at_root.has_value());
  CHECK_THAT(at_root->value, Catch::Matchers::WithinAbs(-0.2, 1e-9));  // -1.2 + 1
  CHECK(at_root->impulse == 0);

  InterventionHistory spent;
  spent = with_entry(spent, 0, 0);
  CHECK_FALSE(intervention_obstacle(p, field, NodeRef{0, 0}, spent).has_value());
}
