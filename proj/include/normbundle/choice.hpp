#pragma once

#include <array>
#include <cstdint>

#include "normbundle/grid.hpp"
#include "normbundle/types.hpp"

namespace normbundle {

// Choice probabilities over the four bundles, in code order (empty, A, B, AB).
struct ProbVector {
  double q_empty = 0.0;
  double q_A = 0.0;
  double q_B = 0.0;
  double q_AB = 0.0;

  double operator[](int v) const {
    switch (v) {
      case kEmpty: return q_empty;
      case kA: return q_A;
      case kB: return q_B;
      default: return q_AB;
    }
  }
};

struct SmoothedResult {
  ProbVector q;
  // pre-renormalization mass minus 1: sigmoid overlap near ties plus grid
  // truncation; diagnostic only
  double prenorm_residual = 0.0;
};

namespace detail {

// Core integrator on deterministic utility levels (0, u_A, u_B, u_A+u_B+gt).
// The grid must already hold the density surface for the intended rho.
SmoothedResult smoothed_probs_core(double u_A, double u_B, double gt, const ShockGrid& grid);

}  // namespace detail

// Sigmoid-smoothed choice probabilities by trapezoid quadrature over the
// correlated shock grid, renormalized to sum to one.
ProbVector smoothed_choice_probs(const Theta& theta, const CovariateRow& x,
                                 const ShareVector& lag, const QuadratureSpec& quad);

SmoothedResult smoothed_choice_probs_ex(const Theta& theta, const CovariateRow& x,
                                        const ShareVector& lag, ShockGrid& grid);

// Monte-Carlo oracle: exact argmax over seeded correlated normal draws, ties
// broken by the fixed priority empty < A < B < AB.  Split into 64 fixed
// substreams with derived seeds and accumulated in substream order, so the
// result is independent of any parallel schedule.
ProbVector mc_choice_probs(const Theta& theta, const CovariateRow& x, const ShareVector& lag,
                           std::int64_t n_draws, std::uint64_t seed);

}  // namespace normbundle
