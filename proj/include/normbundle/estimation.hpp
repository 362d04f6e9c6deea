#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normbundle/dgp.hpp"
#include "normbundle/grid.hpp"
#include "normbundle/optim.hpp"
#include "normbundle/types.hpp"

namespace normbundle {

// Empirical choice shares of one (group, period) cell; the lagged regressor
// for the next period's rows.
struct CellShare {
  std::int64_t group = 0;
  std::int64_t period = 0;
  ShareVector q;
  std::int64_t n = 0;
  bool small = false;  // cell size below the flag threshold
};

struct LaggedShareTable {
  std::vector<CellShare> cells;  // sorted by (group, period)
  std::int64_t min_cell = 15;

  const CellShare* find(std::int64_t group, std::int64_t period) const;
};

// Per-cell sample shares.  Small cells are flagged, never dropped; a gap in a
// group's period sequence is an error because the following period has no lag.
LaggedShareTable compute_lagged_shares(const PanelDataset& data, std::int64_t min_cell = 15);

struct FitConfig {
  ExclusionSpec exclusion;
  QuadratureSpec quad;
  bool restrict_additive = false;
  int n_starts = 8;
  double start_dispersion = 0.5;
  std::uint64_t seed = 1;
  OptimOptions optimizer;
  bool s_nonnegative = false;   // clamp sanction slopes at zero from below
  bool fix_spillovers = false;  // pin s_A = s_B = s_AB = 0 (no-spillover model)
};

void validate(const FitConfig& cfg, std::size_t n_cov);

// Sum over rows after each group's first observed period of the log smoothed
// probability of the observed choice, lagged at q_hat for the prior period.
// Probabilities are floored at 1e-12 before the log.
double loglik(const Theta& theta, const PanelDataset& data, const LaggedShareTable& q_hat,
              const FitConfig& cfg);

// Odd sigmoidal reparametrization keeping rho strictly inside (-1,1) while the
// optimizer works on an unbounded coordinate.
double rho_from_precursor(double pre);
double precursor_from_rho(double rho);

// Maps Theta to/from the packed free-coordinate vector the optimizer sees:
// beta_A (non-excluded), beta_B (non-excluded), s_A, s_B, s_AB (absent under
// the additive restriction), gamma, rho precursor.  Excluded coefficients
// unpack to exactly zero; fix_spillovers removes all three slopes and unpacks
// them as zero.
class ParamPacker {
public:
  ParamPacker(std::size_t n_cov, const ExclusionSpec& exclusion, bool restrict_additive,
              bool s_nonnegative, bool fix_spillovers = false);

  int dim() const { return dim_; }
  Eigen::VectorXd pack(const Theta& th) const;
  Theta unpack(const Eigen::VectorXd& v) const;
  Box box() const;
  const std::vector<std::string>& names() const { return names_; }

  int idx_beta_A(std::size_t col) const { return a_idx_[col]; }  // -1 when excluded
  int idx_beta_B(std::size_t col) const { return b_idx_[col]; }
  int idx_sA() const { return s_a_; }
  int idx_sB() const { return s_b_; }
  int idx_sAB() const { return s_ab_; }  // -1 under the additive restriction
  int idx_gamma() const { return gamma_; }
  int idx_rho() const { return rho_; }

private:
  std::size_t n_cov_;
  bool additive_;
  bool s_nonneg_;
  bool fix_s_;
  std::vector<int> a_idx_, b_idx_;
  int s_a_ = -1, s_b_ = -1, s_ab_ = -1, gamma_ = -1, rho_ = -1;
  int dim_ = 0;
  std::vector<std::string> names_;
};

struct StartRecord {
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

// No start converged; the per-start outcomes ride along for diagnosis.
struct fit_failure_error : non_convergence_error {
  std::vector<StartRecord> start_table;
  fit_failure_error(const std::string& what, std::vector<StartRecord> table)
      : non_convergence_error(what), start_table(std::move(table)) {}
};

struct FitResult {
  Theta theta_hat;
  double loglik = 0.0;
  bool converged = false;
  std::vector<StartRecord> start_table;
  LaggedShareTable lagged_share_table;
  std::int64_t n_rows_used = 0;

  Eigen::VectorXd free_values;          // packed coordinates at the optimum
  std::vector<std::string> free_names;  // matching labels
  Eigen::VectorXd se_plugin;            // observed-information SEs (theta scale; advisory)
  double info_condition = 0.0;          // condition number of the observed information
  std::vector<std::string> warnings;
};

// Multi-start smoothed MLE.  Start 0 is the zero model; the rest disperse
// around it.  Best converged start wins, ties by lowest index.
FitResult fit(const PanelDataset& data, const FitConfig& cfg);

}  // namespace normbundle
