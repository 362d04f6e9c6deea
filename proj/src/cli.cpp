#include "normbundle/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "normbundle/counterfactual.hpp"
#include "normbundle/dataio.hpp"
#include "normbundle/estimation.hpp"
#include "normbundle/inference.hpp"

namespace normbundle {
namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

struct CliOpts {
  std::string config_path;
  std::string data_path;
  std::string out_dir = ".";
  std::int64_t seed = -1;  // <0: no override
  std::vector<std::string> recodes;
};

json number_or_tag(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? json("nan") : json(v > 0 ? "inf" : "-inf");
}

json share_json(const ShareVector& p) {
  return json{{"p_A", p.p_A}, {"p_B", p.p_B}, {"p_AB", p.p_AB}};
}

json theta_json(const Theta& th) {
  return json{{"beta_A", th.beta_A}, {"beta_B", th.beta_B},   {"s_A", th.s_A},
              {"s_B", th.s_B},       {"s_AB", th.s_AB},       {"gamma", th.gamma},
              {"rho", th.rho},       {"restrict_additive", th.restrict_additive}};
}

Theta theta_from_json(const json& j) {
  if (!j.is_object()) throw invalid_input_error("config: theta block must be an object");
  Theta th;
  try {
    th.beta_A = j.at("beta_A").get<std::vector<double>>();
    th.beta_B = j.at("beta_B").get<std::vector<double>>();
    th.s_A = j.value("s_A", 0.0);
    th.s_B = j.value("s_B", 0.0);
    th.gamma = j.value("gamma", 0.0);
    th.rho = j.value("rho", 0.0);
    th.restrict_additive = j.value("restrict_additive", !j.contains("s_AB"));
    th.s_AB = th.restrict_additive ? th.s_A + th.s_B : j.value("s_AB", 0.0);
  } catch (const json::exception& e) {
    throw invalid_input_error(std::string("config: bad theta block: ") + e.what());
  }
  validate(th);
  return th;
}

QuadratureSpec quad_from_json(const json& cfg) {
  QuadratureSpec q;
  const json j = cfg.value("quadrature", json::object());
  q.grid_n = j.value("grid_n", q.grid_n);
  q.bound = j.value("bound", q.bound);
  q.epsilon = j.value("epsilon", q.epsilon);
  return q;
}

std::map<std::string, Recode> parse_recodes(const std::vector<std::string>& specs) {
  std::map<std::string, Recode> out;
  for (const auto& s : specs) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw invalid_input_error("--recode wants <column>=<rule>, got '" + s + "'");
    const std::string col = s.substr(0, eq), rule = s.substr(eq + 1);
    if (rule == "na_to_zero")
      out[col] = Recode::na_to_zero;
    else if (rule == "zero_to_na")
      out[col] = Recode::zero_to_na;
    else
      throw invalid_input_error("unknown recode rule '" + rule +
                                "' (want na_to_zero or zero_to_na)");
  }
  return out;
}

LoadReport load_for(const json& cfg, const CliOpts& opts) {
  if (opts.data_path.empty()) throw invalid_input_error("this command needs --data <csv>");
  const json model = cfg.value("model", json::object());
  const auto names = model.value("covariates", std::vector<std::string>{});
  return load_dataset(opts.data_path, names, parse_recodes(opts.recodes));
}

std::size_t column_index(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end())
    throw invalid_input_error("config references a column the data lacks: " + name);
  return static_cast<std::size_t>(it - names.begin());
}

FitConfig fit_config(const json& cfg, const std::vector<std::string>& cov_names,
                     std::uint64_t seed) {
  FitConfig fc;
  const json model = cfg.value("model", json::object());
  for (const auto& n : model.value("exclude_from_A", std::vector<std::string>{}))
    fc.exclusion.idx_A.insert(column_index(cov_names, n));
  for (const auto& n : model.value("exclude_from_B", std::vector<std::string>{}))
    fc.exclusion.idx_B.insert(column_index(cov_names, n));
  for (std::size_t i : fc.exclusion.idx_A)
    if (fc.exclusion.idx_B.count(i))
      throw invalid_input_error("column excluded from both norms: " + cov_names[i]);
  fc.restrict_additive = model.value("restrict_additive", false);
  fc.s_nonnegative = model.value("s_nonnegative", false);
  fc.fix_spillovers = model.value("fix_spillovers", false);
  fc.quad = quad_from_json(cfg);
  const json opt = cfg.value("optimizer", json::object());
  fc.n_starts = opt.value("n_starts", fc.n_starts);
  fc.start_dispersion = opt.value("start_dispersion", fc.start_dispersion);
  fc.optimizer.max_iter = opt.value("max_iter", fc.optimizer.max_iter);
  fc.optimizer.gradient_tol = opt.value("gradient_tol", fc.optimizer.gradient_tol);
  fc.optimizer.step_tol = opt.value("step_tol", fc.optimizer.step_tol);
  fc.seed = seed;
  return fc;
}

// pooled empirical covariate distribution, rows deduplicated with frequency weights
XDist pooled_xdist(const PanelDataset& data) {
  std::map<std::vector<double>, std::int64_t> freq;
  for (const auto& r : data.rows) ++freq[r.x];
  XDist out;
  const double n = static_cast<double>(data.rows.size());
  for (const auto& [x, f] : freq) out.push_back({CovariateRow{x, 0, 0}, f / n});
  return out;
}

EquilibriumOpts eq_opts(const json& block) {
  EquilibriumOpts o;
  o.damping = block.value("damping", o.damping);
  o.tol = block.value("tol", o.tol);
  o.max_iter = block.value("max_iter", o.max_iter);
  return o;
}

json equilibrium_json(const EquilibriumReport& r) {
  json j{{"p_star", share_json(r.p_star)},
         {"start", share_json(r.start)},
         {"converged", r.converged},
         {"iterations", r.iterations},
         {"residual", r.residual},
         {"spectral_radius", r.spectral_radius},
         {"stable", r.stable}};
  if (r.dQA_ddeltaB)
    j["dQA_ddeltaB"] = *r.dQA_ddeltaB;
  else
    j["derivative_error"] = r.derivative_error;
  return j;
}

SimConfig sim_config(const json& cfg, std::uint64_t seed) {
  const json s = cfg.value("simulation", json::object());
  if (s.empty()) throw invalid_input_error("config: simulate needs a simulation block");
  SimConfig sc;
  sc.seed = seed;
  try {
    sc.n_groups = s.at("n_groups").get<int>();
    sc.n_per_group = s.at("n_per_group").get<int>();
    sc.n_periods = s.at("n_periods").get<int>();
    sc.theta_true = theta_from_json(s.at("theta"));
    for (const json& c : s.at("covariates")) {
      const std::string name = c.at("name"), kind = c.at("kind");
      if (kind == "constant")
        sc.covariates.push_back(ColumnSpec::constant(name));
      else if (kind == "binary")
        sc.covariates.push_back(ColumnSpec::binary(name, c.at("p").get<double>()));
      else if (kind == "normal")
        sc.covariates.push_back(
            ColumnSpec::normal(name, c.at("mu").get<double>(), c.at("sigma").get<double>()));
      else if (kind == "policy_step")
        sc.covariates.push_back(ColumnSpec::policy_step(name, c.at("cutoff").get<int>()));
      else
        throw invalid_input_error("config: unknown covariate kind '" + kind + "'");
    }
    for (const json& row : s.at("initial_shares")) {
      if (!row.is_array() || row.size() != 3)
        throw invalid_input_error("config: initial_shares rows are [p_A, p_B, p_AB]");
      sc.initial_shares.push_back({row[0].get<double>(), row[1].get<double>(),
                                   row[2].get<double>()});
    }
  } catch (const json::exception& e) {
    throw invalid_input_error(std::string("config: bad simulation block: ") + e.what());
  }
  return sc;
}

PolicySpec policy_from_json(const json& p) {
  PolicySpec pol;
  pol.delta_shift_A = p.value("delta_shift_A", 0.0);
  pol.delta_shift_B = p.value("delta_shift_B", 0.0);
  pol.s_scale_A = p.value("s_scale_A", 1.0);
  const std::string rule = p.value("s_ab_adjust", "proportional");
  if (rule == "proportional")
    pol.s_ab_adjust = PolicySpec::SabRule::proportional_to_sA_cut;
  else if (rule == "none")
    pol.s_ab_adjust = PolicySpec::SabRule::none;
  else
    throw invalid_input_error("config: unknown s_ab_adjust '" + rule + "'");
  try {
    pol.horizons = p.value("horizons", std::vector<int>{});
  } catch (const json::exception& e) {
    throw invalid_input_error(std::string("config: bad horizons: ") + e.what());
  }
  validate(pol);
  return pol;
}

json run_simulate(const json& cfg, const CliOpts& opts, std::uint64_t seed,
                  std::vector<std::string>& warnings) {
  (void)warnings;
  const SimConfig sc = sim_config(cfg, seed);
  const SimResult sim = simulate(sc);
  const std::string csv_path =
      (std::filesystem::path(opts.out_dir) / "simulated.csv").string();
  save_dataset(sim.data, csv_path);
  json paths = json::array();
  for (const auto& g : sim.share_path) {
    json gp = json::array();
    for (const auto& p : g) gp.push_back(share_json(p));
    paths.push_back(gp);
  }
  std::printf("simulate: %zu rows -> %s\n", sim.data.rows.size(), csv_path.c_str());
  return json{{"csv_path", csv_path},
              {"n_rows", sim.data.rows.size()},
              {"share_path", paths}};
}

json run_estimate(const json& cfg, const CliOpts& opts, std::uint64_t seed,
                  std::vector<std::string>& warnings) {
  const LoadReport lr = load_for(cfg, opts);
  const FitConfig fc = fit_config(cfg, lr.data.covariate_names, seed);
  const FitResult f = fit(lr.data, fc);
  for (const auto& w : f.warnings) warnings.push_back(w);

  json free = json::array();
  const ParamPacker pk(lr.data.covariate_names.size(), fc.exclusion, fc.restrict_additive,
                       fc.s_nonnegative, fc.fix_spillovers);
  json result{{"converged", f.converged},
              {"loglik", f.loglik},
              {"n_rows_used", f.n_rows_used},
              {"n_rows_loaded", lr.data.rows.size()},
              {"dropped_missing_choice", lr.dropped_missing_choice},
              {"dropped_missing_covariate", lr.dropped_missing_covariate},
              {"theta_hat", theta_json(f.theta_hat)},
              {"info_condition", number_or_tag(f.info_condition)}};

  const InferenceResult inf = sandwich(lr.data, f, fc);
  for (const auto& w : inf.warnings) warnings.push_back(w);
  for (int k = 0; k < pk.dim(); ++k) {
    free.push_back(json{{"name", pk.names()[k]},
                        {"value", f.free_values[k]},
                        {"se", inf.se[k]},
                        {"se_uncorrected", inf.se_uncorrected[k]},
                        {"se_plugin", number_or_tag(f.se_plugin[k])}});
    std::printf("%-14s %10.5f  (se %.5f)\n", pk.names()[k].c_str(), f.free_values[k],
                inf.se[k]);
  }
  result["free"] = free;
  result["a_condition"] = number_or_tag(inf.a_condition);
  result["wald_additivity"] =
      inf.wald_additivity ? json{{"statistic", inf.wald_additivity->statistic},
                                 {"p_value", inf.wald_additivity->p_value}}
                          : json();
  std::printf("loglik %.4f  converged %d\n", f.loglik, int(f.converged));
  return result;
}

json run_equilibrium(const json& cfg, const CliOpts& opts, std::vector<std::string>& warnings,
                     bool classify_mode) {
  (void)warnings;
  const json block = cfg.value("equilibrium", json::object());
  if (!block.contains("theta"))
    throw invalid_input_error("config: equilibrium/classify needs equilibrium.theta");
  const Theta th = theta_from_json(block.at("theta"));
  XDist xd;
  if (!opts.data_path.empty()) {
    xd = pooled_xdist(load_for(cfg, opts).data);
  } else {
    if (th.n_cov() != 1)
      throw invalid_input_error(
          "equilibrium without --data needs an intercept-only theta (one covariate)");
    xd = {{CovariateRow{{1.0}, 0, 0}, 1.0}};
  }
  const QuadratureSpec quad = quad_from_json(cfg);
  const EquilibriumOpts eo = eq_opts(block);

  if (classify_mode) {
    json out = json::array();
    for (const auto& v : classify(th, xd, quad, eo)) {
      out.push_back(json{{"theorem_branch", to_string(v.theorem_branch)},
                         {"numerical_sign", to_string(v.numerical_sign)},
                         {"agree", v.agree},
                         {"equilibrium", equilibrium_json(v.equilibrium)}});
      std::printf("%s\n", to_string(v.theorem_branch));
    }
    return json{{"verdicts", out}};
  }
  json out = json::array();
  for (const auto& r : solve_equilibrium(th, xd, quad, eo)) {
    out.push_back(equilibrium_json(r));
    if (r.converged)
      std::printf("p* = (%.4f, %.4f, %.4f)  stable=%d  sr=%.3f\n", r.p_star.p_A, r.p_star.p_B,
                  r.p_star.p_AB, int(r.stable), r.spectral_radius);
  }
  return json{{"equilibria", out}};
}

json run_counterfactual_cmd(const json& cfg, const CliOpts& opts,
                            std::vector<std::string>& warnings) {
  (void)warnings;
  const json block = cfg.value("counterfactual", json::object());
  if (!block.contains("theta"))
    throw invalid_input_error("config: counterfactual needs counterfactual.theta");
  const Theta th = theta_from_json(block.at("theta"));
  const PolicySpec pol = policy_from_json(block.value("policy", json::object()));
  const bool re_anchor = block.value("re_anchor", false);
  const LoadReport lr = load_for(cfg, opts);
  const CounterfactualPath path =
      run_counterfactual(lr.data, th, pol, quad_from_json(cfg), re_anchor);

  const std::string csv_path =
      (std::filesystem::path(opts.out_dir) / "counterfactual_path.csv").string();
  {
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw invalid_input_error("cannot open for writing: " + csv_path);
    f << counterfactual_csv(path);
  }

  json groups = json::array();
  for (std::size_t g = 0; g < path.groups.size(); ++g) {
    json deltas = json::array();
    for (std::size_t i = 0; i < path.horizons.size(); ++i) {
      const ShareVector& d = path.group_deltas[i][g];
      deltas.push_back(json{{"h", path.horizons[i]},
                            {"dp_A", d.p_A},
                            {"dp_B", d.p_B},
                            {"dp_AB", d.p_AB}});
    }
    groups.push_back(json{{"group", path.groups[g].group},
                          {"weight", path.weights[g]},
                          {"deltas", deltas}});
  }
  json weighted = json::array();
  std::printf("   h       dp_A       dp_B      dp_AB\n");
  for (std::size_t i = 0; i < path.horizons.size(); ++i) {
    const ShareVector& d = path.weighted_deltas[i];
    weighted.push_back(json{{"h", path.horizons[i]},
                            {"dp_A", d.p_A},
                            {"dp_B", d.p_B},
                            {"dp_AB", d.p_AB}});
    std::printf("%4d %10.6f %10.6f %10.6f\n", path.horizons[i], d.p_A, d.p_B, d.p_AB);
  }
  return json{{"csv_path", csv_path},
              {"first_period", path.first_period},
              {"n_observed", path.n_observed},
              {"horizons", path.horizons},
              {"groups", groups},
              {"weighted", weighted}};
}

json run_residualize(const json& cfg, const CliOpts& opts,
                     std::vector<std::string>& warnings) {
  (void)warnings;
  const json block = cfg.value("residualize", json::object());
  if (block.empty()) throw invalid_input_error("config: residualize needs its block");
  const LoadReport lr = load_for(cfg, opts);
  const ResidualizedShares rs = residualize_cohort_shares(
      lr.data, outcome_from_string(block.value("outcome", "any")),
      block.value("fe", std::vector<std::string>{}),
      block.value("covariates", std::vector<std::string>{}),
      block.value("cutoff_period", 0));
  for (std::size_t i = 0; i < rs.periods.size(); ++i)
    std::printf("period %d  adjusted share %.6f\n", rs.periods[i], rs.shares[i]);
  std::printf("tau %.6f  (robust se %.6f)\n", rs.tau, rs.tau_se);
  return json{{"periods", rs.periods}, {"shares", rs.shares},
              {"tau", rs.tau},         {"tau_se", rs.tau_se},
              {"n_rows", rs.n_rows},   {"design_columns", rs.design_columns}};
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int dispatch(const std::string& command, const CliOpts& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  json report{{"schema_version", kSchemaVersion}, {"command", command}};
  json cfg;
  int code = 0;
  std::vector<std::string> warnings;
  try {
    std::ifstream in(opts.config_path);
    if (!in) throw invalid_input_error("cannot open config: " + opts.config_path);
    try {
      cfg = json::parse(in);
    } catch (const json::exception& e) {
      throw parse_error(std::string("config: ") + e.what());
    }
    report["config"] = cfg;

    std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
    if (opts.seed >= 0) seed = static_cast<std::uint64_t>(opts.seed);

    std::filesystem::create_directories(opts.out_dir);

    if (command == "simulate")
      report["results"] = run_simulate(cfg, opts, seed, warnings);
    else if (command == "estimate")
      report["results"] = run_estimate(cfg, opts, seed, warnings);
    else if (command == "equilibrium")
      report["results"] = run_equilibrium(cfg, opts, warnings, false);
    else if (command == "classify")
      report["results"] = run_equilibrium(cfg, opts, warnings, true);
    else if (command == "counterfactual")
      report["results"] = run_counterfactual_cmd(cfg, opts, warnings);
    else
      report["results"] = run_residualize(cfg, opts, warnings);
  } catch (const model_error& e) {
    const std::string kind = e.code();
    report["error"] = json{{"code", kind}, {"message", e.what()}};
    code = (kind == "invalid-input" || kind == "parse-error") ? 2 : 3;
    std::fprintf(stderr, "%s: %s\n", kind.c_str(), e.what());
  } catch (const std::exception& e) {
    report["error"] = json{{"code", "internal"}, {"message", e.what()}};
    code = 3;
    std::fprintf(stderr, "internal: %s\n", e.what());
  }

  report["warnings"] = warnings;
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report["timing"] = json{{"started", utc_now()}, {"seconds", secs}};

  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  const std::string report_path =
      (std::filesystem::path(opts.out_dir) / (command + "_report.json")).string();
  std::ofstream rf(report_path, std::ios::binary);
  if (rf) {
    rf << report.dump(2) << '\n';
  } else {
    std::fprintf(stderr, "cannot write report: %s\n", report_path.c_str());
    if (code == 0) code = 2;
  }
  return code;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"two-norm bundled choice toolkit"};
  app.require_subcommand(1);

  static const char* kCommands[] = {"simulate",       "estimate",   "equilibrium",
                                    "classify",       "counterfactual", "residualize"};
  CliOpts opts;
  for (const char* name : kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "JSON run configuration")->required();
    sub->add_option("--data", opts.data_path, "input CSV panel");
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->add_option("--recode", opts.recodes, "column=rule (na_to_zero | zero_to_na)");
  }

  // CLI11 wants argv-style reversed tokens
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // --help exits cleanly
  }
  return dispatch(app.get_subcommands().front()->get_name(), opts);
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args);
}

}  // namespace normbundle
