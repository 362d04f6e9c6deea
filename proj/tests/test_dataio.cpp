#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "normbundle/dataio.hpp"
#include "normbundle/dgp.hpp"

using namespace normbundle;

namespace {

PanelRow prow(std::int64_t id, int period, int group, int choice, std::vector<double> x) {
  PanelRow r;
  r.id = id;
  r.period = period;
  r.group = group;
  r.choice = choice;
  r.x = std::move(x);
  return r;
}

SimResult small_sim(std::uint64_t seed, int per_group = 250, int periods = 2) {
  SimConfig sc;
  sc.n_groups = 2;
  sc.n_per_group = per_group;
  sc.n_periods = periods;
  sc.theta_true = make_additive_theta({-0.4, 0.3}, {-0.7, -0.2}, 1.2, 0.5, 0.6, -0.3);
  sc.covariates = {ColumnSpec::constant("const"), ColumnSpec::binary("kid", 0.5)};
  sc.initial_shares = {{0.1, 0.2, 0.1}, {0.3, 0.1, 0.2}};
  sc.seed = seed;
  return simulate(sc);
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("three rows round trip") {
  const std::string csv =
      "id,period,group,choice,const,z\n"
      "11,1,0,0,1,0.25\n"
      "12,1,0,AB,1,-1.5\n"
      "13,2,1,2,1,3\n";
  std::istringstream in(csv);
  LoadReport rep = load_dataset(in);
  REQUIRE(rep.data.rows.size() == 3);
  CHECK(rep.data.covariate_names == std::vector<std::string>{"const", "z"});
  CHECK(rep.dropped_missing_choice == 0);
  CHECK(rep.dropped_missing_covariate == 0);

  CHECK(rep.data.rows[0].id == 11);
  CHECK(rep.data.rows[0].period == 1);
  CHECK(rep.data.rows[0].group == 0);
  CHECK(rep.data.rows[0].choice == kEmpty);
  CHECK(rep.data.rows[0].x == std::vector<double>{1.0, 0.25});
  CHECK(rep.data.rows[1].choice == kAB);  // token form
  CHECK(rep.data.rows[1].x[1] == -1.5);
  CHECK(rep.data.rows[2].choice == kB);   // numeric form
}

TEST_CASE("choice token table") {
  const std::string csv =
      "id,period,group,choice\n"
      "1,1,0,empty\n2,1,0,A\n3,1,0,B\n4,1,0,AB\n5,1,0,0\n6,1,0,1\n7,1,0,2\n8,1,0,3\n";
  std::istringstream in(csv);
  LoadReport rep = load_dataset(in);
  REQUIRE(rep.data.rows.size() == 8);
  const int want[] = {kEmpty, kA, kB, kAB, kEmpty, kA, kB, kAB};
  for (int i = 0; i < 8; ++i) CHECK(rep.data.rows[i].choice == want[i]);
}

TEST_CASE("simulated data survives a disk round trip") {
  SimResult sim = small_sim(311);
  const std::string csv = dataset_csv(sim.data);
  std::istringstream in(csv);
  LoadReport rep = load_dataset(in);

  REQUIRE(rep.data.rows.size() == sim.data.rows.size());
  CHECK(rep.data.covariate_names == sim.data.covariate_names);
  for (std::size_t i = 0; i < sim.data.rows.size(); ++i) {
    const PanelRow &a = sim.data.rows[i], &b = rep.data.rows[i];
    CHECK(a.id == b.id);
    CHECK(a.period == b.period);
    CHECK(a.group == b.group);
    CHECK(a.choice == b.choice);
    REQUIRE(a.x.size() == b.x.size());
    for (std::size_t j = 0; j < a.x.size(); ++j) CHECK(a.x[j] == b.x[j]);  // bitwise
  }
}

TEST_CASE("missing fields drop rows with counts") {
  const std::string csv =
      "id,period,group,choice,z\n"
      "1,1,0,A,0.5\n"
      "2,1,0,,0.5\n"
      "3,1,0,NA,0.5\n"
      "4,1,0,B,\n"
      "5,1,0,B,na\n"
      "6,1,0,AB,1.5\n";
  std::istringstream in(csv);
  LoadReport rep = load_dataset(in);
  CHECK(rep.data.rows.size() == 2);
  CHECK(rep.dropped_missing_choice == 2);
  CHECK(rep.dropped_missing_covariate == 2);
  CHECK(rep.data.rows[0].id == 1);
  CHECK(rep.data.rows[1].id == 6);
}

TEST_CASE("malformed input is an error with its line") {
  auto load_str = [](const std::string& s) {
    std::istringstream in(s);
    return load_dataset(in);
  };
  const std::string head = "id,period,group,choice,z\n";

  try {
    load_str(head + "1,1,0,A,0.5\n2,1,0,C,0.5\n");
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("'C'") != std::string::npos);
  }
  try {
    load_str(head + "1,1,0,A,zero\n");
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("covariate 'z'") != std::string::npos);
    CHECK(std::string(e.what()).find("'zero'") != std::string::npos);
  }
  CHECK_THROWS_AS(load_str(head + "1,1,0,A\n"), parse_error);          // short row
  CHECK_THROWS_AS(load_str("id,period,choice,z\n1,1,A,1\n"), parse_error);  // no group column
  CHECK_THROWS_AS(load_str(""), parse_error);
  CHECK_THROWS_AS(load_str(head + "x7,1,0,A,0.5\n"), parse_error);     // id not integer
}

TEST_CASE("covariate selection and recodes") {
  const std::string csv =
      "id,period,group,choice,a,b,c\n"
      "1,1,0,A,1,2,3\n"
      "2,1,0,B,4,,0\n";
  {
    std::istringstream in(csv);
    LoadReport rep = load_dataset(in, {"c", "a"});
    CHECK(rep.data.covariate_names == std::vector<std::string>{"c", "a"});
    CHECK(rep.data.rows[0].x == std::vector<double>{3.0, 1.0});
    CHECK(rep.data.rows.size() == 2);  // b's blank is not loaded, so nothing drops
  }
  {
    std::istringstream in(csv);
    LoadReport rep = load_dataset(in, {}, {{"b", Recode::na_to_zero}});
    CHECK(rep.data.rows.size() == 2);
    CHECK(rep.data.rows[1].x == std::vector<double>{4.0, 0.0, 0.0});
  }
  {
    std::istringstream in(csv);
    LoadReport rep = load_dataset(in, {}, {{"c", Recode::zero_to_na}});
    CHECK(rep.data.rows.size() == 1);
    CHECK(rep.dropped_missing_covariate == 1);
  }
  {
    std::istringstream in(csv);
    CHECK_THROWS_AS(load_dataset(in, {"a"}, {{"b", Recode::na_to_zero}}),
                    invalid_input_error);
  }
}

TEST_CASE("carriage returns are tolerated") {
  const std::string csv = "id,period,group,choice,z\r\n1,1,0,A,0.5\r\n";
  std::istringstream in(csv);
  LoadReport rep = load_dataset(in);
  REQUIRE(rep.data.rows.size() == 1);
  CHECK(rep.data.rows[0].x[0] == 0.5);
}

TEST_CASE("outcome names") {
  CHECK(outcome_from_string("A") == Outcome::A_only);
  CHECK(outcome_from_string("B") == Outcome::B_only);
  CHECK(outcome_from_string("AB") == Outcome::AB);
  CHECK(outcome_from_string("any") == Outcome::any);
  CHECK_THROWS_AS(outcome_from_string("both"), invalid_input_error);
}

TEST_CASE("intercept plus step has a closed form") {
  PanelDataset d;
  d.rows = {
      prow(1, 1, 0, kA, {}),    prow(2, 1, 0, kEmpty, {}),
      prow(3, 2, 0, kA, {}),    prow(4, 2, 0, kA, {}),    prow(5, 2, 0, kEmpty, {}),
      prow(6, 3, 0, kA, {}),    prow(7, 3, 0, kEmpty, {}),
  };
  ResidualizedShares rs = residualize_cohort_shares(d, Outcome::A_only, {}, {}, 3);
  REQUIRE(rs.periods == std::vector<int>{1, 2, 3});
  // adjusted share = period mean minus the pooled pre-cutoff mean (3/5)
  CHECK(rs.shares[0] == doctest::Approx(0.5 - 0.6).epsilon(1e-12));
  CHECK(rs.shares[1] == doctest::Approx(2.0 / 3.0 - 0.6).epsilon(1e-12));
  CHECK(rs.shares[2] == doctest::Approx(0.5 - 0.6).epsilon(1e-12));
  CHECK(rs.tau == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(rs.design_columns == std::vector<std::string>{"intercept", "post"});
}

TEST_CASE("matches a direct least-squares recomputation") {
  SimResult sim = small_sim(312, 250, 2);  // 1000 rows
  const PanelDataset& d = sim.data;
  ResidualizedShares rs =
      residualize_cohort_shares(d, Outcome::any, {"group"}, {"kid"}, 2);

  // oracle: y on [1, 1{group=1}, kid, post] via normal equations
  const std::int64_t n = static_cast<std::int64_t>(d.rows.size());
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd y(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const PanelRow& r = d.rows[i];
    y[i] = r.choice != kEmpty;
    X(i, 0) = 1.0;
    X(i, 1) = r.group == 1;
    X(i, 2) = r.x[1];
    X(i, 3) = r.period >= 2;
  }
  const Eigen::VectorXd b = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  const Eigen::VectorXd e = y - X * b;
  CHECK((X.transpose() * e).lpNorm<Eigen::Infinity>() <= 1e-8);

  CHECK(rs.tau == doctest::Approx(b[3]).epsilon(1e-10));
  CHECK(rs.n_rows == n);
  double m1 = 0.0, m2 = 0.0;
  std::int64_t n1 = 0, n2 = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (d.rows[i].period == 1) m1 += e[i], ++n1;
    else m2 += e[i], ++n2;
  }
  CHECK(rs.shares[0] == doctest::Approx(m1 / n1).epsilon(1e-10));
  CHECK(rs.shares[1] == doctest::Approx(m2 / n2 + b[3]).epsilon(1e-10));

  // HC1 step variance, recomputed
  const Eigen::MatrixXd xtx_inv = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(4, 4);
  for (std::int64_t i = 0; i < n; ++i)
    meat += e[i] * e[i] * X.row(i).transpose() * X.row(i);
  const Eigen::MatrixXd V = xtx_inv * meat * xtx_inv * (n / double(n - 4));
  CHECK(rs.tau_se == doctest::Approx(std::sqrt(V(3, 3))).epsilon(1e-10));
}

TEST_CASE("collinear designs are refused by name") {
  SimResult sim = small_sim(313);
  try {
    residualize_cohort_shares(sim.data, Outcome::any, {}, {"const"}, 2);
    FAIL("expected rank_deficient_error");
  } catch (const rank_deficient_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("collinear") != std::string::npos);
    const bool names_one = msg.find("const") != std::string::npos ||
                           msg.find("intercept") != std::string::npos;
    CHECK(names_one);
  }
  CHECK_THROWS_AS(
      residualize_cohort_shares(sim.data, Outcome::any, {}, {"nope"}, 2),
      invalid_input_error);
  CHECK_THROWS_AS(
      residualize_cohort_shares(PanelDataset{}, Outcome::any, {}, {}, 2),
      invalid_input_error);
}

}  // TEST_SUITE
