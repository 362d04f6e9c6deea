#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "normbundle/cli.hpp"

using namespace normbundle;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("normbundle_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  f << body;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_report(const std::string& path) { return json::parse(slurp(path)); }

int run(std::vector<std::string> args) { return cli_main(args); }

// seed/theta match a fit known to converge in roughly fifteen seconds
const char* kSimConfig = R"({
  "seed": 17,
  "model": {"covariates": ["const", "kid"]},
  "simulation": {
    "n_groups": 2, "n_per_group": 1500, "n_periods": 3,
    "theta": {"beta_A": [-0.4, 0.3], "beta_B": [-0.7, -0.2],
              "s_A": 1.2, "s_B": 0.5, "gamma": 0.6, "rho": -0.3,
              "restrict_additive": true},
    "covariates": [{"name": "const", "kind": "constant"},
                   {"name": "kid", "kind": "binary", "p": 0.5}],
    "initial_shares": [[0.1, 0.2, 0.1], [0.3, 0.1, 0.2]]
  }
})";

const char* kSmallSimConfig = R"({
  "seed": 11,
  "simulation": {
    "n_groups": 2, "n_per_group": 200, "n_periods": 3,
    "theta": {"beta_A": [-0.4], "beta_B": [-0.7],
              "s_A": 1.2, "s_B": 0.5, "gamma": 0.6, "rho": -0.3,
              "restrict_additive": true},
    "covariates": [{"name": "const", "kind": "constant"}],
    "initial_shares": [[0.1, 0.2, 0.1], [0.3, 0.1, 0.2]]
  }
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("simulate then estimate round trips through report files") {
  TempDir td("pipeline");
  write_file(td.file("sim.json"), kSimConfig);
  REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.path.string()}) == 0);

  const json sim = read_report(td.file("simulate_report.json"));
  CHECK(sim.at("schema_version") == 1);
  CHECK(sim.at("command") == "simulate");
  CHECK(sim.at("results").at("n_rows") == 9000);
  CHECK(sim.at("results").at("share_path").size() == 2);
  CHECK(fs::exists(td.file("simulated.csv")));
  CHECK_FALSE(sim.contains("error"));

  write_file(td.file("est.json"), R"({
    "seed": 3,
    "model": {"covariates": ["const", "kid"], "restrict_additive": false},
    "optimizer": {"n_starts": 2}
  })");
  REQUIRE(run({"estimate", "--config", td.file("est.json"), "--data", td.file("simulated.csv"),
               "--out", td.path.string()}) == 0);

  const json est = read_report(td.file("estimate_report.json"));
  const json& res = est.at("results");
  CHECK(res.at("converged") == true);
  CHECK(res.at("n_rows_used") == 6000);
  CHECK(res.at("n_rows_loaded") == 9000);
  CHECK(res.at("free").size() == 9);
  for (const json& row : res.at("free")) {
    CHECK(row.at("se").get<double>() > 0.0);
    CHECK(row.at("se_uncorrected").get<double>() > 0.0);
  }
  CHECK(res.at("wald_additivity").at("p_value").get<double>() > 0.0);
  CHECK(res.at("wald_additivity").at("p_value").get<double>() <= 1.0);
  CHECK(res.at("theta_hat").at("beta_A").size() == 2);
  CHECK(est.at("config").at("seed") == 3);
}

TEST_CASE("classify reports the complements branch for a bundle premium") {
  TempDir td("classify");
  write_file(td.file("cls.json"), R"({
    "equilibrium": {
      "theta": {"beta_A": [-0.5], "beta_B": [-0.5],
                "s_A": 2.4, "s_B": 0.4, "gamma": 1.0, "rho": -0.7,
                "restrict_additive": true}
    }
  })");
  REQUIRE(run({"classify", "--config", td.file("cls.json"), "--out", td.path.string()}) == 0);
  const json rep = read_report(td.file("classify_report.json"));
  const json& verdicts = rep.at("results").at("verdicts");
  REQUIRE(verdicts.size() >= 1);
  for (const json& v : verdicts) {
    CHECK(v.at("theorem_branch") == "complements");
    CHECK(v.at("agree") == true);
    CHECK(v.at("equilibrium").at("stable") == true);
  }
}

TEST_CASE("identity counterfactual reports exactly zero deltas") {
  TempDir td("cf");
  write_file(td.file("sim.json"), kSmallSimConfig);
  REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.path.string()}) == 0);

  write_file(td.file("cf.json"), R"({
    "model": {"covariates": ["const"]},
    "counterfactual": {
      "theta": {"beta_A": [-0.4], "beta_B": [-0.7],
                "s_A": 1.2, "s_B": 0.5, "gamma": 0.6, "rho": -0.3,
                "restrict_additive": true},
      "policy": {"horizons": [1, 3]}
    }
  })");
  REQUIRE(run({"counterfactual", "--config", td.file("cf.json"), "--data",
               td.file("simulated.csv"), "--out", td.path.string()}) == 0);

  const json rep = read_report(td.file("counterfactual_report.json"));
  const json& res = rep.at("results");
  CHECK(res.at("horizons") == json({1, 3}));
  CHECK(res.at("n_observed") == 3);
  for (const json& w : res.at("weighted")) {
    CHECK(w.at("dp_A").get<double>() == 0.0);
    CHECK(w.at("dp_B").get<double>() == 0.0);
    CHECK(w.at("dp_AB").get<double>() == 0.0);
  }
  CHECK(fs::exists(td.file("counterfactual_path.csv")));
  const std::string csv = slurp(td.file("counterfactual_path.csv"));
  CHECK(csv.rfind("group,period,scenario,p_A,p_B,p_AB", 0) == 0);
}

TEST_CASE("exit codes separate user errors from model failures") {
  TempDir td("codes");

  SUBCASE("missing config file") {
    CHECK(run({"classify", "--config", td.file("nope.json")}) == 2);
  }
  SUBCASE("malformed config json") {
    write_file(td.file("bad.json"), "{ not json");
    CHECK(run({"classify", "--config", td.file("bad.json"), "--out", td.path.string()}) == 2);
    const json rep = read_report(td.file("classify_report.json"));
    CHECK(rep.at("error").at("code") == "parse-error");
  }
  SUBCASE("invalid theta") {
    write_file(td.file("rho.json"), R"({
      "equilibrium": {"theta": {"beta_A": [0.0], "beta_B": [0.0], "rho": 1.5}}
    })");
    CHECK(run({"classify", "--config", td.file("rho.json"), "--out", td.path.string()}) == 2);
    CHECK(read_report(td.file("classify_report.json")).at("error").at("code") ==
          "invalid-input");
  }
  SUBCASE("counterfactual without data") {
    write_file(td.file("cf.json"), R"({
      "counterfactual": {"theta": {"beta_A": [0.0], "beta_B": [0.0]}}
    })");
    CHECK(run({"counterfactual", "--config", td.file("cf.json"), "--out",
               td.path.string()}) == 2);
  }
  SUBCASE("unknown subcommand or missing option") {
    CHECK(run({"frobnicate", "--config", "x.json"}) == 2);
    CHECK(run({"estimate"}) == 2);
    CHECK(run({}) == 2);
  }
  SUBCASE("starved optimizer maps to the failure exit code") {
    write_file(td.file("sim.json"), kSmallSimConfig);
    REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.path.string()}) ==
            0);
    write_file(td.file("est.json"), R"({
      "model": {"covariates": ["const"], "restrict_additive": true},
      "optimizer": {"n_starts": 1, "max_iter": 4, "gradient_tol": 1e-13}
    })");
    CHECK(run({"estimate", "--config", td.file("est.json"), "--data", td.file("simulated.csv"),
               "--out", td.path.string()}) == 3);
    const json rep = read_report(td.file("estimate_report.json"));
    CHECK(rep.at("error").at("code") == "non-convergence");
    CHECK_FALSE(rep.contains("results"));
  }
}

TEST_CASE("reports are byte stable apart from timing") {
  TempDir td("stable");
  write_file(td.file("cls.json"), R"({
    "equilibrium": {
      "theta": {"beta_A": [-0.5], "beta_B": [-0.5],
                "s_A": 1.2, "s_B": 0.4, "gamma": 0.5, "rho": -0.2,
                "restrict_additive": true}
    }
  })");
  fs::create_directories(td.file("a"));
  fs::create_directories(td.file("b"));
  REQUIRE(run({"classify", "--config", td.file("cls.json"), "--out", td.file("a")}) == 0);
  REQUIRE(run({"classify", "--config", td.file("cls.json"), "--out", td.file("b")}) == 0);

  json ra = read_report(td.file("a") + "/classify_report.json");
  json rb = read_report(td.file("b") + "/classify_report.json");
  CHECK(ra.at("timing").at("started").get<std::string>().size() == 20);
  ra.erase("timing");
  rb.erase("timing");
  CHECK(ra.dump() == rb.dump());
}

TEST_CASE("seed override controls the simulated bytes") {
  TempDir td("seed");
  write_file(td.file("sim.json"), kSmallSimConfig);
  fs::create_directories(td.file("a"));
  fs::create_directories(td.file("b"));
  fs::create_directories(td.file("c"));
  REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.file("a"),
               "--seed", "5"}) == 0);
  REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.file("b"),
               "--seed", "5"}) == 0);
  REQUIRE(run({"simulate", "--config", td.file("sim.json"), "--out", td.file("c"),
               "--seed", "6"}) == 0);
  CHECK(slurp(td.file("a") + "/simulated.csv") == slurp(td.file("b") + "/simulated.csv"));
  CHECK(slurp(td.file("a") + "/simulated.csv") != slurp(td.file("c") + "/simulated.csv"));
}

TEST_CASE("recode flags reach the loader") {
  TempDir td("recode");
  write_file(td.file("panel.csv"),
             "id,period,group,choice,kid\n"
             "1,1,0,A,0\n"
             "2,1,0,B,NA\n"
             "3,1,0,0,1\n"
             "1,2,0,AB,0\n"
             "2,2,0,A,1\n"
             "3,2,0,,1\n");
  write_file(td.file("res.json"), R"({
    "model": {"covariates": ["kid"]},
    "residualize": {"outcome": "any", "fe": [], "covariates": ["kid"], "cutoff_period": 2}
  })");

  REQUIRE(run({"residualize", "--config", td.file("res.json"), "--data", td.file("panel.csv"),
               "--out", td.file("with")}) == 0);
  const json with = read_report(td.file("with") + "/residualize_report.json");
  CHECK(with.at("results").at("n_rows") == 4);  // NA covariate and blank choice both drop

  REQUIRE(run({"residualize", "--config", td.file("res.json"), "--data", td.file("panel.csv"),
               "--out", td.file("kept"), "--recode", "kid=na_to_zero"}) == 0);
  const json kept = read_report(td.file("kept") + "/residualize_report.json");
  CHECK(kept.at("results").at("n_rows") == 5);
  CHECK(kept.at("results").at("design_columns") ==
        json({"intercept", "kid", "post"}));

  CHECK(run({"residualize", "--config", td.file("res.json"), "--data", td.file("panel.csv"),
             "--out", td.file("bad"), "--recode", "kid=upcase"}) == 2);
}

}  // TEST_SUITE
