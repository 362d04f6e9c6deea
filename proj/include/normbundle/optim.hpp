#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "normbundle/errors.hpp"

namespace normbundle {

// Axis-aligned feasible box.  Bounds are where diverging parameters come to
// rest (and get flagged by the caller), not a modeling statement.
struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

inline void validate(const Box& b) {
  if (b.lo.size() != b.hi.size()) throw invalid_input_error("box bound lengths differ");
  for (Eigen::Index k = 0; k < b.lo.size(); ++k)
    if (!(b.lo[k] < b.hi[k])) throw invalid_input_error("box lower bound not below upper");
}

struct OptimOptions {
  int max_iter = 400;
  // sup-norm tolerance on the projected gradient of the objective as passed
  // (callers working on a mean-scale objective get a mean-scale tolerance)
  double gradient_tol = 1e-5;
  double step_tol = 1e-9;
};

inline void validate(const OptimOptions& o) {
  if (o.max_iter < 1) throw invalid_input_error("optimizer max_iter must be >= 1");
  if (!(o.gradient_tol > 0.0)) throw invalid_input_error("optimizer gradient_tol must be positive");
  if (!(o.step_tol > 0.0)) throw invalid_input_error("optimizer step_tol must be positive");
}

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;            // objective value at x
  Eigen::VectorXd gradient;  // central-difference gradient of the objective at x
  double grad_norm = 0.0;    // sup-norm of the projected (feasible-direction) gradient
  bool converged = false;
  int iterations = 0;
  int n_evals = 0;
  std::string message;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

// Central differences with per-coordinate step 1e-6 * max(1, |x_k|).  Probe
// points can overshoot a box face by that step, so objectives must tolerate
// hairline excursions beyond their nominal bounds.
Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, int* n_evals = nullptr);

// Central-difference Hessian with per-coordinate step rel_step * max(1, |x_k|);
// symmetric by construction.
Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x, double rel_step = 5e-4);

// Quasi-Newton (BFGS) ascent projected onto the box.  Converged means the
// projected gradient sup-norm reached gradient_tol; a stall on step_tol or a
// failed line search reports converged only if that same test passes at the
// final iterate.
OptimResult maximize(const Objective& f, const Eigen::VectorXd& x0, const Box& box,
                     const OptimOptions& opts);

}  // namespace normbundle
