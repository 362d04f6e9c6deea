#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normbundle/dgp.hpp"
#include "normbundle/equilibrium.hpp"

namespace normbundle {

// A parameter intervention: baseline-utility shifts and/or a scaling of the
// conformity return on A.  When s_A is cut, the joint return s_AB can follow
// proportionally (default) or stay put.
struct PolicySpec {
  double delta_shift_A = 0.0;  // added to beta_A[0]
  double delta_shift_B = 0.0;  // added to beta_B[0]
  double s_scale_A = 1.0;      // multiplies s_A; must be positive

  enum class SabRule { proportional_to_sA_cut, none };
  SabRule s_ab_adjust = SabRule::proportional_to_sA_cut;

  std::vector<int> horizons;  // periods past the last observed one; >= 1, sorted
};

void validate(const PolicySpec& policy);

// True when the spec changes nothing; the policy path is then the bitwise
// continuation of the baseline.
bool is_identity(const PolicySpec& policy);

// theta_hat with the intervention applied.  The proportional rule lowers s_AB
// by the amount cut from s_A, so an additive theta stays additive; the
// restrict_additive marker is recomputed from the resulting slopes.
Theta policy_theta(const Theta& theta_hat, const PolicySpec& policy);

// One group's observed stretch: covariate distribution, sample shares, and row
// count for each consecutive observed period.
struct CohortPanel {
  std::int64_t group = 0;
  int first_period = 1;  // label of x_by_period[0]
  std::vector<XDist> x_by_period;
  std::vector<ShareVector> observed;
  std::vector<std::int64_t> n_rows;  // may be empty: groups then weighted equally
};

// Groups a panel into cohorts: per (group, period) the empirical covariate
// distribution (distinct rows weighted by frequency) and sample shares.
// Every group must cover every period between the panel's first and last;
// absent cells are an error listing the offenders.
std::vector<CohortPanel> cohorts_from_panel(const PanelDataset& data);

struct GroupPath {
  std::int64_t group = 0;
  std::vector<ShareVector> baseline;  // index 0 = first observed period, length T_len + max h
  std::vector<ShareVector> policy;    // index 0 = last observed period (equals baseline there)
};

struct CounterfactualPath {
  std::vector<int> horizons;
  int first_period = 1;
  int n_observed = 0;               // periods in the observed stretch (T_len)
  std::vector<GroupPath> groups;
  std::vector<double> weights;      // per group, proportional to last-period size

  // deltas[i][g] = policy - baseline at horizons[i] for group g; weighted[i]
  // averages them with `weights`.  Components read as (dp_A, dp_B, dp_AB).
  std::vector<std::vector<ShareVector>> group_deltas;
  std::vector<ShareVector> weighted_deltas;
};

// Forward-iterates each group's share path under the fitted and the policy
// parameters.  The baseline anchors at the first observed shares, applies the
// period-t covariate distribution while observed periods last (or re-anchors
// to the observed shares each period when re_anchor_observed is set), then
// freezes the last period's covariates.  The policy path branches off at the
// last observed period and iterates with the intervened parameters.
CounterfactualPath run_counterfactual(const std::vector<CohortPanel>& cohorts,
                                      const Theta& theta_hat, const PolicySpec& policy,
                                      const QuadratureSpec& quad,
                                      bool re_anchor_observed = false);

CounterfactualPath run_counterfactual(const PanelDataset& data, const Theta& theta_hat,
                                      const PolicySpec& policy, const QuadratureSpec& quad,
                                      bool re_anchor_observed = false);

// Long-format dump: group, period, scenario, p_A, p_B, p_AB.  Policy rows
// start at the branch period.
std::string counterfactual_csv(const CounterfactualPath& path);

}  // namespace normbundle
