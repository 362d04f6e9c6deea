#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <vector>

#include "normbundle/errors.hpp"

namespace normbundle {

// Bundle codes, fixed order: 0 = neither, 1 = A only, 2 = B only, 3 = both.
enum Bundle : int { kEmpty = 0, kA = 1, kB = 2, kAB = 3 };

// Population shares of the three adopting bundles; the outside share
// 1 - (p_A + p_B + p_AB) is always derived, never stored.
struct ShareVector {
  double p_A = 0.0;
  double p_B = 0.0;
  double p_AB = 0.0;

  double q_A() const { return p_A + p_AB; }   // prevalence of A (alone or joint)
  double q_B() const { return p_B + p_AB; }
  double p_empty() const { return 1.0 - p_A - p_B - p_AB; }

  bool operator==(const ShareVector&) const = default;
};

inline void validate(const ShareVector& p) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(p.p_A) || !in01(p.p_B) || !in01(p.p_AB))
    throw invalid_input_error("share component outside [0,1]");
  if (p.p_A + p.p_B + p.p_AB > 1.0 + 1e-12)
    throw invalid_input_error("share components sum above 1");
}

// Structural parameters. beta_A/beta_B share one covariate layout; column 0 is
// the intercept by convention so baseline-utility shifts and exclusion
// restrictions go through the same mechanism.
struct Theta {
  std::vector<double> beta_A;
  std::vector<double> beta_B;
  double s_A = 0.0;
  double s_B = 0.0;
  double s_AB = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  bool restrict_additive = false;

  std::size_t n_cov() const { return beta_A.size(); }
};

inline Theta make_additive_theta(std::vector<double> beta_A, std::vector<double> beta_B,
                                 double s_A, double s_B, double gamma, double rho) {
  Theta th;
  th.beta_A = std::move(beta_A);
  th.beta_B = std::move(beta_B);
  th.s_A = s_A;
  th.s_B = s_B;
  th.s_AB = s_A + s_B;  // additive restriction holds exactly
  th.gamma = gamma;
  th.rho = rho;
  th.restrict_additive = true;
  return th;
}

inline void validate(const Theta& th) {
  if (!(th.rho > -1.0 && th.rho < 1.0))
    throw invalid_input_error("rho must lie strictly inside (-1,1)");
  if (th.beta_A.size() != th.beta_B.size())
    throw invalid_input_error("beta_A and beta_B must have equal length");
  if (th.restrict_additive && th.s_AB != th.s_A + th.s_B)
    throw invalid_input_error("restrict_additive set but s_AB != s_A + s_B");
}

// One observation's covariates plus its (group, period) cell coordinates.
struct CovariateRow {
  std::vector<double> x;
  int group_id = 0;
  int period = 0;
};

// Column indices constrained to zero per norm (the exclusion restrictions).
struct ExclusionSpec {
  std::set<std::size_t> idx_A;
  std::set<std::size_t> idx_B;
};

inline void validate(const ExclusionSpec& ex, std::size_t n_cov) {
  for (auto i : ex.idx_A)
    if (i >= n_cov) throw invalid_input_error("exclusion index out of range for beta_A");
  for (auto i : ex.idx_B)
    if (i >= n_cov) throw invalid_input_error("exclusion index out of range for beta_B");
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Deterministic utility levels (u_empty, u_A, u_B, u_AB) at lagged shares
// `lag`.  u_AB = u_A + u_B + gamma + (s_AB - s_A - s_B) * lag.p_AB, so the
// joint bundle is additive plus the complementarity term and the non-additive
// sanction correction.
inline std::array<double, 4> mean_utilities(const Theta& th, const CovariateRow& x,
                                            const ShareVector& lag) {
  if (x.x.size() != th.beta_A.size())
    throw invalid_input_error("covariate row length does not match beta length");
  const double u_A = dot(x.x, th.beta_A) + th.s_A * (lag.p_A + lag.p_AB);
  const double u_B = dot(x.x, th.beta_B) + th.s_B * (lag.p_B + lag.p_AB);
  const double u_AB = u_A + u_B + th.gamma + (th.s_AB - th.s_A - th.s_B) * lag.p_AB;
  return {0.0, u_A, u_B, u_AB};
}

// Effective complementarity at lagged shares; governs the geometry of the
// choice-boundary segments (collapses to gamma under additive sanctions).
inline double gamma_tilde(const Theta& th, const ShareVector& lag) {
  return th.gamma + lag.p_AB * (th.s_AB - th.s_A - th.s_B);
}

}  // namespace normbundle
