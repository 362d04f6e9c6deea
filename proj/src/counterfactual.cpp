#include "normbundle/counterfactual.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace normbundle {

void validate(const PolicySpec& policy) {
  if (!(policy.s_scale_A > 0.0)) throw invalid_input_error("s_scale_A must be positive");
  if (policy.horizons.empty()) throw invalid_input_error("horizons must be nonempty");
  if (policy.horizons.front() < 1) throw invalid_input_error("horizons must be >= 1");
  if (!std::is_sorted(policy.horizons.begin(), policy.horizons.end()))
    throw invalid_input_error("horizons must be sorted");
}

bool is_identity(const PolicySpec& policy) {
  return policy.delta_shift_A == 0.0 && policy.delta_shift_B == 0.0 && policy.s_scale_A == 1.0;
}

Theta policy_theta(const Theta& theta_hat, const PolicySpec& policy) {
  if (is_identity(policy)) return theta_hat;  // bitwise: the null delta stays exact
  Theta th = theta_hat;
  if (th.beta_A.empty()) throw invalid_input_error("theta has no intercept column to shift");
  th.beta_A[0] += policy.delta_shift_A;
  th.beta_B[0] += policy.delta_shift_B;
  th.s_A = theta_hat.s_A * policy.s_scale_A;
  if (policy.s_ab_adjust == PolicySpec::SabRule::proportional_to_sA_cut)
    th.s_AB = theta_hat.s_AB - (1.0 - policy.s_scale_A) * theta_hat.s_A;
  th.restrict_additive = th.s_AB == th.s_A + th.s_B;
  return th;
}

std::vector<CohortPanel> cohorts_from_panel(const PanelDataset& data) {
  if (data.rows.empty()) throw invalid_input_error("empty panel");
  int t_first = data.rows.front().period, t_last = t_first;
  for (const auto& r : data.rows) {
    t_first = std::min(t_first, r.period);
    t_last = std::max(t_last, r.period);
  }

  // counts and covariate tallies per (group, period)
  struct Cell {
    std::int64_t n = 0;
    std::int64_t chosen[4] = {0, 0, 0, 0};
    std::map<std::vector<double>, std::int64_t> x_freq;
  };
  std::map<std::pair<int, int>, Cell> cells;
  for (const auto& r : data.rows) {
    Cell& c = cells[{r.group, r.period}];
    ++c.n;
    ++c.chosen[r.choice];
    ++c.x_freq[r.x];
  }
  std::vector<int> group_ids;
  for (const auto& [key, cell] : cells)
    if (group_ids.empty() || group_ids.back() != key.first) group_ids.push_back(key.first);
  std::sort(group_ids.begin(), group_ids.end());
  group_ids.erase(std::unique(group_ids.begin(), group_ids.end()), group_ids.end());

  std::string missing;
  for (int g : group_ids)
    for (int t = t_first; t <= t_last; ++t)
      if (!cells.count({g, t})) {
        if (!missing.empty()) missing += ", ";
        missing += "(group=" + std::to_string(g) + ", period=" + std::to_string(t) + ")";
      }
  if (!missing.empty())
    throw invalid_input_error("observed shares missing for cells: " + missing);

  std::vector<CohortPanel> out;
  for (int g : group_ids) {
    CohortPanel cp;
    cp.group = g;
    cp.first_period = t_first;
    for (int t = t_first; t <= t_last; ++t) {
      const Cell& c = cells.at({g, t});
      const double n = static_cast<double>(c.n);
      cp.observed.push_back({c.chosen[kA] / n, c.chosen[kB] / n, c.chosen[kAB] / n});
      XDist xd;
      for (const auto& [x, freq] : c.x_freq)
        xd.push_back({CovariateRow{x, g, t}, static_cast<double>(freq) / n});
      cp.x_by_period.push_back(std::move(xd));
      cp.n_rows.push_back(c.n);
    }
    out.push_back(std::move(cp));
  }
  return out;
}

CounterfactualPath run_counterfactual(const std::vector<CohortPanel>& cohorts,
                                      const Theta& theta_hat, const PolicySpec& policy,
                                      const QuadratureSpec& quad, bool re_anchor_observed) {
  validate(theta_hat);
  validate(policy);
  if (cohorts.empty()) throw invalid_input_error("no cohorts");
  const std::size_t t_len = cohorts.front().x_by_period.size();
  if (t_len == 0) throw invalid_input_error("cohort has no observed periods");
  for (const auto& cp : cohorts) {
    if (cp.x_by_period.size() != t_len || cp.observed.size() != t_len)
      throw invalid_input_error("cohorts must cover one common stretch of periods");
    if (!cp.n_rows.empty() && cp.n_rows.size() != t_len)
      throw invalid_input_error("n_rows length does not match the period count");
    for (const auto& xd : cp.x_by_period) validate(xd, theta_hat.n_cov());
    for (const auto& p : cp.observed) validate(p);
  }

  const Theta th_pol = policy_theta(theta_hat, policy);
  const int max_h = policy.horizons.back();

  CounterfactualPath out;
  out.horizons = policy.horizons;
  out.first_period = cohorts.front().first_period;
  out.n_observed = static_cast<int>(t_len);

  double weight_sum = 0.0;
  for (const auto& cp : cohorts) {
    GroupPath gp;
    gp.group = cp.group;
    gp.baseline.push_back(cp.observed.front());
    for (std::size_t t = 1; t < t_len; ++t)
      gp.baseline.push_back(re_anchor_observed
                                ? cp.observed[t]
                                : best_response(theta_hat, cp.x_by_period[t], gp.baseline.back(),
                                                quad));
    const XDist& x_frozen = cp.x_by_period.back();
    for (int h = 1; h <= max_h; ++h)
      gp.baseline.push_back(best_response(theta_hat, x_frozen, gp.baseline.back(), quad));

    gp.policy.push_back(gp.baseline[t_len - 1]);
    for (int h = 1; h <= max_h; ++h)
      gp.policy.push_back(best_response(th_pol, x_frozen, gp.policy.back(), quad));

    const double w = cp.n_rows.empty() ? 1.0 : static_cast<double>(cp.n_rows.back());
    out.weights.push_back(w);
    weight_sum += w;
    out.groups.push_back(std::move(gp));
  }
  for (double& w : out.weights) w /= weight_sum;

  for (int h : policy.horizons) {
    std::vector<ShareVector> per_group;
    ShareVector avg{};
    for (std::size_t g = 0; g < out.groups.size(); ++g) {
      const GroupPath& gp = out.groups[g];
      const ShareVector& base = gp.baseline[t_len - 1 + h];
      const ShareVector& pol = gp.policy[h];
      ShareVector d{pol.p_A - base.p_A, pol.p_B - base.p_B, pol.p_AB - base.p_AB};
      avg.p_A += out.weights[g] * d.p_A;
      avg.p_B += out.weights[g] * d.p_B;
      avg.p_AB += out.weights[g] * d.p_AB;
      per_group.push_back(d);
    }
    out.group_deltas.push_back(std::move(per_group));
    out.weighted_deltas.push_back(avg);
  }
  return out;
}

CounterfactualPath run_counterfactual(const PanelDataset& data, const Theta& theta_hat,
                                      const PolicySpec& policy, const QuadratureSpec& quad,
                                      bool re_anchor_observed) {
  return run_counterfactual(cohorts_from_panel(data), theta_hat, policy, quad,
                            re_anchor_observed);
}

std::string counterfactual_csv(const CounterfactualPath& path) {
  std::ostringstream os;
  os << "group,period,scenario,p_A,p_B,p_AB\n";
  char buf[160];
  auto line = [&](std::int64_t g, int t, const char* scen, const ShareVector& p) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%s,%.17g,%.17g,%.17g\n", static_cast<long long>(g),
                  t, scen, p.p_A, p.p_B, p.p_AB);
    os << buf;
  };
  for (const auto& gp : path.groups) {
    for (std::size_t i = 0; i < gp.baseline.size(); ++i)
      line(gp.group, path.first_period + static_cast<int>(i), "baseline", gp.baseline[i]);
    for (std::size_t i = 0; i < gp.policy.size(); ++i)
      line(gp.group, path.first_period + path.n_observed - 1 + static_cast<int>(i), "policy",
           gp.policy[i]);
  }
  return os.str();
}

}  // namespace normbundle
