#include "normbundle/dgp.hpp"

#include <cmath>

#include "normbundle/errors.hpp"
#include "normbundle/rng.hpp"

namespace normbundle {

void validate(const SimConfig& cfg) {
  validate(cfg.theta_true);
  if (cfg.n_groups < 1) throw invalid_input_error("n_groups must be at least 1");
  if (cfg.n_per_group < 1) throw invalid_input_error("n_per_group must be at least 1");
  if (cfg.n_periods < 2) throw invalid_input_error("n_periods must be at least 2");
  if (cfg.covariates.size() != cfg.theta_true.n_cov())
    throw invalid_input_error("covariate spec length does not match coefficient length");
  if (cfg.initial_shares.size() != static_cast<std::size_t>(cfg.n_groups))
    throw invalid_input_error("initial_shares must list one ShareVector per group");
  for (const auto& s : cfg.initial_shares) validate(s);
  for (const auto& c : cfg.covariates) {
    if (c.name.empty()) throw invalid_input_error("covariate name is empty");
    switch (c.kind) {
      case ColumnSpec::Kind::binary:
        if (!(c.p >= 0.0 && c.p <= 1.0))
          throw invalid_input_error("binary covariate probability outside [0,1]");
        break;
      case ColumnSpec::Kind::normal:
        if (!(c.sigma >= 0.0) || !std::isfinite(c.mu) || !std::isfinite(c.sigma))
          throw invalid_input_error("normal covariate needs finite mu and sigma >= 0");
        break;
      default:
        break;
    }
  }
}

namespace {

int draw_choice(const Theta& th, const std::vector<double>& x, const ShareVector& lag,
                NormalSampler& rng) {
  const auto u = mean_utilities(th, CovariateRow{x, 0, 0}, lag);
  double z_A, z_B;
  rng.shock_pair(th.rho, z_A, z_B);
  const double v[4] = {0.0, u[kA] + z_A, u[kB] + z_B, u[kAB] + z_A + z_B};
  int best = kEmpty;
  for (int c = kA; c <= kAB; ++c)
    if (v[c] > v[best]) best = c;
  return best;
}

}  // namespace

SimResult simulate(const SimConfig& cfg) {
  validate(cfg);
  SimResult out;
  for (const auto& c : cfg.covariates) out.data.covariate_names.push_back(c.name);
  out.share_path.assign(cfg.n_groups, {});
  out.data.rows.reserve(static_cast<std::size_t>(cfg.n_groups) * cfg.n_periods *
                        cfg.n_per_group);

  std::int64_t next_id = 1;
  for (int g = 0; g < cfg.n_groups; ++g) {
    NormalSampler rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(g)));
    ShareVector lag = cfg.initial_shares[g];
    auto& path = out.share_path[g];
    for (int t = 1; t <= cfg.n_periods; ++t) {
      long n_A = 0, n_B = 0, n_AB = 0;
      for (int i = 0; i < cfg.n_per_group; ++i) {
        PanelRow row;
        row.id = next_id++;
        row.period = t;
        row.group = g;
        row.x.reserve(cfg.covariates.size());
        for (const auto& c : cfg.covariates) {
          switch (c.kind) {
            case ColumnSpec::Kind::constant: row.x.push_back(1.0); break;
            case ColumnSpec::Kind::binary:
              row.x.push_back(rng.uniform() < c.p ? 1.0 : 0.0);
              break;
            case ColumnSpec::Kind::normal:
              row.x.push_back(c.mu + c.sigma * rng.normal());
              break;
            case ColumnSpec::Kind::policy_step:
              row.x.push_back(t >= c.cutoff ? 1.0 : 0.0);
              break;
          }
        }
        row.choice = draw_choice(cfg.theta_true, row.x, lag, rng);
        n_A += row.choice == kA;
        n_B += row.choice == kB;
        n_AB += row.choice == kAB;
        out.data.rows.push_back(std::move(row));
      }
      const double n = cfg.n_per_group;
      lag = {n_A / n, n_B / n, n_AB / n};
      path.push_back(lag);
    }
  }
  return out;
}

}  // namespace normbundle
