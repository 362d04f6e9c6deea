#pragma once

#include <optional>
#include <string>
#include <vector>

#include "normbundle/estimation.hpp"

namespace normbundle {

struct WaldTest {
  double statistic = 0.0;
  double p_value = 1.0;
};

// Variance of the fitted free parameters from the stacked moment system
// (score equations for theta plus the per-cell share moments), so the noise
// of the estimated lagged shares propagates into the reported uncertainty.
// Everything is on the reported parameter scale: the rho coordinate is
// delta-transformed back from its unbounded precursor.
struct InferenceResult {
  Eigen::VectorXd se;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd se_uncorrected;   // share-noise term dropped; for comparison
  Eigen::MatrixXd vcov_uncorrected;
  std::optional<WaldTest> wald_additivity;  // absent when s_AB is not a free parameter
  double a_condition = 0.0;  // condition number of the score-jacobian block
  std::vector<std::string> warnings;
};

// Upper tail of the chi-square distribution with one degree of freedom.
double chi2_1_pvalue(double statistic);

namespace detail {
// Jacobian of the stacked share moments with respect to the stacked shares:
// block-diagonal, one -(n_c/N) I_3 per table cell, cells in table order.
Eigen::MatrixXd assemble_a_qq(const LaggedShareTable& table, std::int64_t n_rows);
}  // namespace detail

// Sandwich variance at a converged fit.  Derivative blocks are finite
// differences; share perturbations (step 1e-5) are clipped to the simplex
// with one-sided differences at a boundary.  The Wald test targets
// H0: s_AB = s_A + s_B.
InferenceResult sandwich(const PanelDataset& data, const FitResult& fit, const FitConfig& cfg);

}  // namespace normbundle
