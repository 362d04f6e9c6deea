#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "normbundle/choice.hpp"

namespace normbundle {

// Population covariate distribution: finitely many rows with weights (nonnegative, summing to 1).
struct WeightedRow {
  CovariateRow x;
  double weight = 1.0;
};
using XDist = std::vector<WeightedRow>;

void validate(const XDist& x_dist, std::size_t n_cov);

struct EquilibriumOpts {
  double damping = 0.5;
  double tol = 1e-10;
  int max_iter = 2000;
  double fd_step = 1e-5;  // step for the jacobian and the delta_B shift derivative
};

struct EquilibriumReport {
  ShareVector p_star{};             // fixed point (last iterate when not converged)
  ShareVector start{};              // the start that found it
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;            // sup-norm of p_tilde(p) - p at the reported point
  Eigen::Matrix3d jacobian = Eigen::Matrix3d::Zero();
  double spectral_radius = 0.0;
  bool stable = false;
  std::optional<double> dQA_ddeltaB;  // absent when I - jacobian is numerically singular
  std::string derivative_error;       // reason code when dQA_ddeltaB is absent
};

// 4x4x4 lattice over the interior of the share simplex.
std::vector<ShareVector> default_start_lattice();

// One application of the population best-response map at lagged shares p.
ShareVector best_response(const Theta& theta, const XDist& x_dist, const ShareVector& p,
                          const QuadratureSpec& quad);

// Damped fixed-point solve from each start; converged iterates deduplicated within 10*tol.
// Returns distinct equilibria first (discovery order), then one entry per non-converged start.
std::vector<EquilibriumReport> solve_equilibrium(const Theta& theta, const XDist& x_dist,
                                                 const QuadratureSpec& quad,
                                                 const std::vector<ShareVector>& starts,
                                                 const EquilibriumOpts& opts = {});
std::vector<EquilibriumReport> solve_equilibrium(const Theta& theta, const XDist& x_dist,
                                                 const QuadratureSpec& quad,
                                                 const EquilibriumOpts& opts = {});

// Boundary line integrals for one covariate row (deltas are the row's mean-utility indices).
struct TTerms {
  double t1A, t2A, t3A;
  double t1B, t2B, t3B;
  double t1AB, t2AB, t3AB;
};
TTerms boundary_integrals(const Theta& theta, double delta_A, double delta_B,
                          const ShareVector& p);

// Exact jacobian of the population map at p, averaged over x_dist.
Eigen::Matrix3d analytic_jacobian(const Theta& theta, const XDist& x_dist, const ShareVector& p);

// Central-difference jacobian of the same map; probe points may leave the simplex.
Eigen::Matrix3d fd_jacobian(const Theta& theta, const XDist& x_dist, const ShareVector& p,
                            const QuadratureSpec& quad, double step = 1e-5);

enum class TheoremBranch { complements, independent, substitutes, indeterminate };
enum class NumericalSign { positive, zero, negative };

const char* to_string(TheoremBranch b);
const char* to_string(NumericalSign s);

struct ClassificationVerdict {
  TheoremBranch theorem_branch = TheoremBranch::indeterminate;
  NumericalSign numerical_sign = NumericalSign::zero;
  bool agree = false;
  EquilibriumReport equilibrium;  // the stable equilibrium the sign was evaluated at
};

// One verdict per stable equilibrium found from the default lattice.
std::vector<ClassificationVerdict> classify(const Theta& theta, const XDist& x_dist,
                                            const QuadratureSpec& quad,
                                            const EquilibriumOpts& opts = {});

}  // namespace normbundle
