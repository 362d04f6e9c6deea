#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "normbundle/dgp.hpp"

namespace normbundle {

// Header id,period,group,choice,<covariates...>; LF endings; covariates at
// full double precision so a written dataset reloads bit-identically.
std::string dataset_csv(const PanelDataset& data);
void save_dataset(const PanelDataset& data, const std::string& path);

struct LoadReport {
  PanelDataset data;
  std::int64_t dropped_missing_choice = 0;
  std::int64_t dropped_missing_covariate = 0;
};

// Per-column recode applied while loading: na_to_zero turns a blank/NA
// covariate field into 0 instead of dropping the row; zero_to_na does the
// opposite.
enum class Recode { na_to_zero, zero_to_na };

// Reads the four required columns plus the named covariates (empty list:
// every extra column, header order).  choice accepts 0..3 or the tokens
// empty/A/B/AB.  Blank and NA fields are missing: a missing choice or
// covariate drops the row (counted in the report); any other malformed field
// is an error carrying its line number.
LoadReport load_dataset(const std::string& path,
                        const std::vector<std::string>& covariates = {},
                        const std::map<std::string, Recode>& recodes = {});
LoadReport load_dataset(std::istream& in, const std::vector<std::string>& covariates = {},
                        const std::map<std::string, Recode>& recodes = {});

// Which bundle indicator is regressed.
enum class Outcome { A_only, B_only, AB, any };  // any = adopted at least one norm

Outcome outcome_from_string(const std::string& s);

struct ResidualizedShares {
  std::vector<int> periods;      // sorted
  std::vector<double> shares;    // per-period mean residual + post-cutoff term
  double tau = 0.0;              // post-cutoff step coefficient
  double tau_se = 0.0;           // heteroskedasticity-robust (HC1)
  std::int64_t n_rows = 0;
  std::vector<std::string> design_columns;
};

// OLS of the indicator on an intercept, fixed-effect dummies (first level of
// each factor dropped), the named covariates, and a post-cutoff step; the
// adjusted share for period t is the mean residual there plus the step term.
// "group" as a factor name means the panel's group id; a covariate name means
// its distinct values.  A rank-deficient design is an error naming the
// columns that fall out of the pivot.
ResidualizedShares residualize_cohort_shares(const PanelDataset& data, Outcome outcome,
                                             const std::vector<std::string>& fe_columns,
                                             const std::vector<std::string>& covariate_columns,
                                             int cutoff_period);

}  // namespace normbundle
