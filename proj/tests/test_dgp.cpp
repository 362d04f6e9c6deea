#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "normbundle/choice.hpp"
#include "normbundle/dgp.hpp"
#include "normbundle/equilibrium.hpp"
#include "normbundle/errors.hpp"

using namespace normbundle;

namespace {

SimConfig base_config() {
  SimConfig cfg;
  cfg.n_groups = 2;
  cfg.n_per_group = 500;
  cfg.n_periods = 3;
  cfg.theta_true = make_additive_theta({-0.4}, {-0.7}, 0.8, 0.5, 0.3, 0.2);
  cfg.covariates = {ColumnSpec::constant("one")};
  cfg.initial_shares = {{0.25, 0.25, 0.25}, {0.1, 0.1, 0.1}};
  cfg.seed = 42;
  return cfg;
}

bool same_rows(const PanelDataset& a, const PanelDataset& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& r = a.rows[i];
    const auto& s = b.rows[i];
    if (r.id != s.id || r.period != s.period || r.group != s.group || r.choice != s.choice ||
        r.x != s.x)
      return false;
  }
  return true;
}

ShareVector recount(const PanelDataset& d, int group, int period) {
  long n = 0, a = 0, b = 0, ab = 0;
  for (const auto& r : d.rows) {
    if (r.group != group || r.period != period) continue;
    ++n;
    a += r.choice == kA;
    b += r.choice == kB;
    ab += r.choice == kAB;
  }
  return {double(a) / n, double(b) / n, double(ab) / n};
}

}  // namespace

TEST_SUITE("dgp") {

TEST_CASE("identical seeds give identical panels") {
  const SimConfig cfg = base_config();
  const SimResult a = simulate(cfg);
  const SimResult b = simulate(cfg);
  CHECK(same_rows(a.data, b.data));
  CHECK(a.share_path == b.share_path);

  SimConfig other = cfg;
  other.seed = 43;
  CHECK(!same_rows(a.data, simulate(other).data));
}

TEST_CASE("panel structure") {
  const SimConfig cfg = base_config();
  const SimResult res = simulate(cfg);
  CHECK(res.data.rows.size() == std::size_t(2 * 3 * 500));
  CHECK(res.data.covariate_names == std::vector<std::string>{"one"});

  std::int64_t expect_id = 1;
  for (const auto& r : res.data.rows) {
    CHECK(r.id == expect_id++);
    CHECK(r.choice >= 0);
    CHECK(r.choice <= 3);
    CHECK(r.x.size() == 1);
  }
  // emitted share path is exactly the per-cell recount
  for (int g = 0; g < 2; ++g)
    for (int t = 1; t <= 3; ++t) {
      const ShareVector got = res.share_path[g][t - 1];
      const ShareVector want = recount(res.data, g, t);
      CHECK(got.p_A == want.p_A);
      CHECK(got.p_B == want.p_B);
      CHECK(got.p_AB == want.p_AB);
    }
}

TEST_CASE("flat preferences land on the quadrant point") {
  SimConfig cfg;
  cfg.n_groups = 1;
  cfg.n_per_group = 100000;
  cfg.n_periods = 3;
  cfg.theta_true = make_additive_theta({0.0}, {0.0}, 0.0, 0.0, 0.0, 0.0);
  cfg.covariates = {ColumnSpec::constant("one")};
  cfg.initial_shares = {{0.25, 0.25, 0.25}};
  cfg.seed = 9;
  const SimResult res = simulate(cfg);
  for (const auto& s : res.share_path[0]) {
    CHECK(std::fabs(s.p_A - 0.25) <= 0.005);
    CHECK(std::fabs(s.p_B - 0.25) <= 0.005);
    CHECK(std::fabs(s.p_AB - 0.25) <= 0.005);
    CHECK(std::fabs(s.p_empty() - 0.25) <= 0.005);
  }
}

TEST_CASE("realized path settles on the fixed point") {
  const Theta th = make_additive_theta({0.0}, {0.0}, 2.46, 0.36, 1.05, -0.70);
  SimConfig cfg;
  cfg.n_groups = 1;
  cfg.n_per_group = 100000;
  cfg.n_periods = 10;
  cfg.theta_true = th;
  cfg.covariates = {ColumnSpec::constant("one")};
  cfg.initial_shares = {{0.3, 0.1, 0.4}};
  cfg.seed = 606;
  const SimResult res = simulate(cfg);
  const auto& path = res.share_path[0];

  const double step = std::max({std::fabs(path[9].p_A - path[8].p_A),
                                std::fabs(path[9].p_B - path[8].p_B),
                                std::fabs(path[9].p_AB - path[8].p_AB)});
  CHECK(step <= 1e-3);

  const auto reps =
      solve_equilibrium(th, XDist{{CovariateRow{{1.0}, 0, 0}, 1.0}}, QuadratureSpec{});
  REQUIRE(!reps.empty());
  REQUIRE(reps[0].stable);
  const ShareVector ps = reps[0].p_star;
  const double dist = std::max({std::fabs(path[9].p_A - ps.p_A),
                                std::fabs(path[9].p_B - ps.p_B),
                                std::fabs(path[9].p_AB - ps.p_AB)});
  CHECK(dist <= 0.01);
}

TEST_CASE("cell shares track the smoothed probabilities") {
  SimConfig cfg;
  cfg.n_groups = 1;
  cfg.n_per_group = 100000;
  cfg.n_periods = 3;
  cfg.theta_true = make_additive_theta({-0.4}, {-0.7}, 0.8, 0.5, 0.3, 0.2);
  cfg.covariates = {ColumnSpec::constant("one")};
  cfg.initial_shares = {{0.2, 0.2, 0.2}};
  cfg.seed = 77;
  const SimResult res = simulate(cfg);
  const double tol = 3.0 * std::sqrt(0.25 / cfg.n_per_group) + 3e-3;
  for (int t = 2; t <= 3; ++t) {
    const ShareVector lag = res.share_path[0][t - 2];
    const ProbVector q = smoothed_choice_probs(cfg.theta_true, CovariateRow{{1.0}, 0, 0},
                                               lag, QuadratureSpec{});
    const ShareVector got = res.share_path[0][t - 1];
    CHECK(std::fabs(got.p_A - q.q_A) <= tol);
    CHECK(std::fabs(got.p_B - q.q_B) <= tol);
    CHECK(std::fabs(got.p_AB - q.q_AB) <= tol);
  }
}

TEST_CASE("negative policy shifter suppresses the targeted norm") {
  SimConfig with;
  with.n_groups = 1;
  with.n_per_group = 20000;
  with.n_periods = 4;
  with.theta_true = make_additive_theta({-0.3, 0.0}, {-0.4, -0.5}, 0.9, 0.6, 0.4, 0.1);
  with.covariates = {ColumnSpec::constant("one"), ColumnSpec::policy_step("ban", 3)};
  with.initial_shares = {{0.25, 0.25, 0.25}};
  with.seed = 1234;

  SimConfig without = with;
  without.theta_true = make_additive_theta({-0.3, 0.0}, {-0.4, 0.0}, 0.9, 0.6, 0.4, 0.1);

  const SimResult a = simulate(with);
  const SimResult b = simulate(without);
  // pre-cutoff periods identical draw-by-draw
  for (int t = 1; t <= 2; ++t) {
    CHECK(a.share_path[0][t - 1].p_A == b.share_path[0][t - 1].p_A);
    CHECK(a.share_path[0][t - 1].p_B == b.share_path[0][t - 1].p_B);
    CHECK(a.share_path[0][t - 1].p_AB == b.share_path[0][t - 1].p_AB);
  }
  // post-cutoff: B usage weakly lower under the ban
  for (int t = 3; t <= 4; ++t) {
    const double with_b = a.share_path[0][t - 1].q_B();
    const double without_b = b.share_path[0][t - 1].q_B();
    CHECK(with_b <= without_b);
  }
}

TEST_CASE("config validation") {
  SimConfig cfg = base_config();
  cfg.n_periods = 1;
  CHECK_THROWS_AS(simulate(cfg), invalid_input_error);

  cfg = base_config();
  cfg.covariates.push_back(ColumnSpec::constant("extra"));
  CHECK_THROWS_AS(simulate(cfg), invalid_input_error);

  cfg = base_config();
  cfg.initial_shares.pop_back();
  CHECK_THROWS_AS(simulate(cfg), invalid_input_error);

  cfg = base_config();
  cfg.covariates[0] = ColumnSpec::binary("bad", 1.5);
  CHECK_THROWS_AS(simulate(cfg), invalid_input_error);
}

}  // TEST_SUITE
