#include "normbundle/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "normbundle/errors.hpp"
#include "normbundle/grid.hpp"

namespace normbundle {

namespace {

constexpr double kStabilityMargin = 1e-9;
constexpr double kSingularDet = 1e-10;
constexpr double kInf = std::numeric_limits<double>::infinity();

double supdiff(const ShareVector& a, const ShareVector& b) {
  return std::max({std::fabs(a.p_A - b.p_A), std::fabs(a.p_B - b.p_B),
                   std::fabs(a.p_AB - b.p_AB)});
}

// Population map with per-row utility indices precomputed; owns its shock grid.
class ResponseMap {
 public:
  ResponseMap(const Theta& theta, const XDist& x_dist, const QuadratureSpec& quad)
      : theta_(theta), grid_(quad) {
    grid_.set_rho(theta.rho);
    rows_.reserve(x_dist.size());
    for (const auto& r : x_dist)
      rows_.push_back({dot(theta.beta_A, r.x.x), dot(theta.beta_B, r.x.x), r.weight});
  }

  ShareVector apply(const ShareVector& p, double shift_A = 0.0, double shift_B = 0.0) const {
    const double qa = p.q_A(), qb = p.q_B();
    const double gt = gamma_tilde(theta_, p);
    double a = 0, b = 0, ab = 0;
    for (const auto& r : rows_) {
      const double u_A = r.d_A + shift_A + theta_.s_A * qa;
      const double u_B = r.d_B + shift_B + theta_.s_B * qb;
      const auto res = detail::smoothed_probs_core(u_A, u_B, gt, grid_);
      a += r.w * res.q.q_A;
      b += r.w * res.q.q_B;
      ab += r.w * res.q.q_AB;
    }
    return {a, b, ab};
  }

 private:
  struct Row {
    double d_A, d_B, w;
  };
  Theta theta_;
  ShockGrid grid_;
  std::vector<Row> rows_;
};

struct IterOutcome {
  ShareVector p;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

bool finite(const ShareVector& p) {
  return std::isfinite(p.p_A) && std::isfinite(p.p_B) && std::isfinite(p.p_AB);
}

IterOutcome damped_iterate(const ResponseMap& map, ShareVector x, double damping, double tol,
                           int max_iter) {
  IterOutcome out;
  for (int k = 1; k <= max_iter; ++k) {
    const ShareVector t = map.apply(x);
    if (!finite(t)) {
      out = {x, false, k, std::numeric_limits<double>::quiet_NaN()};
      return out;
    }
    const double r = supdiff(t, x);
    if (r < tol) return {x, true, k, r};
    x = {(1 - damping) * x.p_A + damping * t.p_A, (1 - damping) * x.p_B + damping * t.p_B,
         (1 - damping) * x.p_AB + damping * t.p_AB};
    out = {x, false, k, r};
  }
  out.residual = supdiff(map.apply(out.p), out.p);
  return out;
}

double& comp(ShareVector& p, int j) {
  switch (j) {
    case 0: return p.p_A;
    case 1: return p.p_B;
    default: return p.p_AB;
  }
}

Eigen::Matrix3d fd_jacobian(const ResponseMap& map, const ShareVector& p, double h) {
  Eigen::Matrix3d J;
  for (int j = 0; j < 3; ++j) {
    ShareVector hi = p, lo = p;
    comp(hi, j) += h;
    comp(lo, j) -= h;
    const ShareVector up = map.apply(hi), dn = map.apply(lo);
    J(0, j) = (up.p_A - dn.p_A) / (2 * h);
    J(1, j) = (up.p_B - dn.p_B) / (2 * h);
    J(2, j) = (up.p_AB - dn.p_AB) / (2 * h);
  }
  return J;
}

// Chord-Newton refinement of a nearby coarse-grid fixed point; empty on failure.
std::optional<IterOutcome> newton_refine(const ResponseMap& map, ShareVector p, double tol,
                                         double fd_step) {
  Eigen::Matrix3d J = fd_jacobian(map, p, fd_step);
  Eigen::PartialPivLU<Eigen::Matrix3d> lu(Eigen::Matrix3d::Identity() - J);
  for (int k = 1; k <= 40; ++k) {
    const ShareVector t = map.apply(p);
    if (!finite(t)) return std::nullopt;
    const double r = supdiff(t, p);
    if (r < tol) return IterOutcome{p, true, k, r};
    const Eigen::Vector3d step =
        lu.solve(Eigen::Vector3d(t.p_A - p.p_A, t.p_B - p.p_B, t.p_AB - p.p_AB));
    if (!step.allFinite() || step.cwiseAbs().maxCoeff() > 0.5) return std::nullopt;
    p = {p.p_A + step(0), p.p_B + step(1), p.p_AB + step(2)};
    if (p.p_A < -1e-9 || p.p_B < -1e-9 || p.p_AB < -1e-9 ||
        p.p_A + p.p_B + p.p_AB > 1 + 1e-9)
      return std::nullopt;
    p = {std::max(p.p_A, 0.0), std::max(p.p_B, 0.0), std::max(p.p_AB, 0.0)};
    if (k % 12 == 0) {
      J = fd_jacobian(map, p, fd_step);
      lu.compute(Eigen::Matrix3d::Identity() - J);
    }
  }
  return std::nullopt;
}

double spectral_radius(const Eigen::Matrix3d& J) {
  Eigen::EigenSolver<Eigen::Matrix3d> es(J, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

double norm_pdf2(double a, double b, double rho) {
  const double om = 1.0 - rho * rho;
  return std::exp(-(a * a - 2 * rho * a * b + b * b) / (2 * om)) /
         (2 * M_PI * std::sqrt(om));
}

template <class F>
double line_integral(F&& f, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 12, 1e-10);
}

}  // namespace

void validate(const XDist& x_dist, std::size_t n_cov) {
  if (x_dist.empty()) throw invalid_input_error("covariate distribution is empty");
  double wsum = 0;
  for (const auto& r : x_dist) {
    if (r.x.x.size() != n_cov)
      throw invalid_input_error("covariate row length does not match coefficient length");
    if (!(r.weight >= 0) || !std::isfinite(r.weight))
      throw invalid_input_error("covariate weights must be nonnegative");
    wsum += r.weight;
  }
  if (std::fabs(wsum - 1.0) > 1e-8)
    throw invalid_input_error("covariate weights must sum to 1");
}

std::vector<ShareVector> default_start_lattice() {
  static const double v[] = {0.1, 0.3, 0.5, 0.7};
  std::vector<ShareVector> starts;
  for (double a : v)
    for (double b : v)
      for (double c : v)
        if (a + b + c < 1.0 - 1e-12) starts.push_back({a, b, c});
  return starts;
}

ShareVector best_response(const Theta& theta, const XDist& x_dist, const ShareVector& p,
                          const QuadratureSpec& quad) {
  validate(theta);
  validate(x_dist, theta.n_cov());
  validate(p);
  validate(quad);
  return ResponseMap(theta, x_dist, quad).apply(p);
}

std::vector<EquilibriumReport> solve_equilibrium(const Theta& theta, const XDist& x_dist,
                                                 const QuadratureSpec& quad,
                                                 const std::vector<ShareVector>& starts,
                                                 const EquilibriumOpts& opts) {
  validate(theta);
  validate(x_dist, theta.n_cov());
  validate(quad);
  if (starts.empty()) throw invalid_input_error("no equilibrium starts supplied");
  if (!(opts.damping > 0 && opts.damping <= 1))
    throw invalid_input_error("damping must lie in (0, 1]");
  for (const auto& s : starts) validate(s);

  const ResponseMap fine(theta, x_dist, quad);
  // Locate basins on a cheaper grid, then polish at the requested one; starts whose
  // coarse stage lands on an already-polished point are merged without re-polishing.
  const int coarse_n = std::max(50, quad.grid_n / 8);
  const bool two_stage = quad.grid_n >= 160;
  std::optional<ResponseMap> coarse;
  if (two_stage)
    coarse.emplace(theta, x_dist, QuadratureSpec{coarse_n, quad.bound, quad.epsilon});
  std::vector<ShareVector> coarse_seen;

  std::vector<EquilibriumReport> found, failed;
  for (const auto& s : starts) {
    IterOutcome out;
    if (two_stage) {
      IterOutcome pre = damped_iterate(*coarse, s, opts.damping,
                                       std::max(opts.tol * 100, 1e-8), opts.max_iter);
      if (pre.converged) {
        const bool seen =
            std::any_of(coarse_seen.begin(), coarse_seen.end(),
                        [&](const ShareVector& c) { return supdiff(c, pre.p) <= 1e-6; });
        if (seen) continue;
        coarse_seen.push_back(pre.p);
        auto ref = newton_refine(fine, pre.p, opts.tol, opts.fd_step);
        if (ref) {
          out = *ref;
          out.iterations += pre.iterations;
        } else {
          out = damped_iterate(fine, pre.p, opts.damping, opts.tol, opts.max_iter);
          out.iterations += pre.iterations;
        }
      } else {
        out = damped_iterate(fine, s, opts.damping, opts.tol, opts.max_iter);
      }
    } else {
      out = damped_iterate(fine, s, opts.damping, opts.tol, opts.max_iter);
    }

    if (!out.converged) {
      EquilibriumReport r;
      r.p_star = out.p;
      r.start = s;
      r.converged = false;
      r.iterations = out.iterations;
      r.residual = out.residual;
      r.spectral_radius = std::numeric_limits<double>::quiet_NaN();
      r.derivative_error = "not-converged";
      failed.push_back(std::move(r));
      continue;
    }
    const bool duplicate =
        std::any_of(found.begin(), found.end(), [&](const EquilibriumReport& r) {
          return supdiff(r.p_star, out.p) <= 10 * opts.tol;
        });
    if (duplicate) continue;

    EquilibriumReport r;
    r.p_star = out.p;
    r.start = s;
    r.converged = true;
    r.iterations = out.iterations;
    r.residual = out.residual;
    r.jacobian = fd_jacobian(fine, out.p, opts.fd_step);
    r.spectral_radius = spectral_radius(r.jacobian);
    r.stable = r.spectral_radius < 1.0 - kStabilityMargin;

    const Eigen::Matrix3d M = Eigen::Matrix3d::Identity() - r.jacobian;
    if (std::fabs(M.determinant()) < kSingularDet) {
      r.derivative_error = "singular-equilibrium";
    } else {
      const double h = opts.fd_step;
      const ShareVector up = fine.apply(out.p, 0.0, h), dn = fine.apply(out.p, 0.0, -h);
      const Eigen::Vector3d b((up.p_A - dn.p_A) / (2 * h), (up.p_B - dn.p_B) / (2 * h),
                              (up.p_AB - dn.p_AB) / (2 * h));
      const Eigen::Vector3d dp = M.partialPivLu().solve(b);
      r.dQA_ddeltaB = dp(0) + dp(2);
    }
    found.push_back(std::move(r));
  }
  found.insert(found.end(), failed.begin(), failed.end());
  return found;
}

std::vector<EquilibriumReport> solve_equilibrium(const Theta& theta, const XDist& x_dist,
                                                 const QuadratureSpec& quad,
                                                 const EquilibriumOpts& opts) {
  return solve_equilibrium(theta, x_dist, quad, default_start_lattice(), opts);
}

TTerms boundary_integrals(const Theta& theta, double delta_A, double delta_B,
                          const ShareVector& p) {
  const double mu_A = delta_A + theta.s_A * p.q_A();
  const double mu_B = delta_B + theta.s_B * p.q_B();
  const double gt = gamma_tilde(theta, p);
  const double rho = theta.rho;
  const double r2 = std::sqrt(2.0);

  TTerms t{};
  t.t1A = line_integral([&](double u) { return norm_pdf2(-mu_A, u, rho); }, -kInf,
                        std::min(-mu_B, -mu_B - gt));
  t.t2A = gt < 0 ? r2 * line_integral(
                            [&](double u) { return norm_pdf2(u, u + mu_A - mu_B, rho); },
                            -mu_A, -mu_A - gt)
                 : 0.0;
  t.t3A = line_integral([&](double u) { return norm_pdf2(u, -mu_B - gt, rho); },
                        std::max(-mu_A, -mu_A - gt), kInf);

  t.t1B = line_integral([&](double u) { return norm_pdf2(u, -mu_B, rho); }, -kInf,
                        std::min(-mu_A, -mu_A - gt));
  t.t2B = gt < 0 ? r2 * line_integral(
                            [&](double u) { return norm_pdf2(u + mu_B - mu_A, u, rho); },
                            -mu_B, -mu_B - gt)
                 : 0.0;
  t.t3B = line_integral([&](double u) { return norm_pdf2(-mu_A - gt, u, rho); },
                        std::max(-mu_B, -mu_B - gt), kInf);

  t.t1AB = gt > 0 ? r2 * line_integral(
                             [&](double u) {
                               return norm_pdf2(u, -(mu_A + mu_B + gt) - u, rho);
                             },
                             -mu_A - gt, -mu_A)
                  : 0.0;
  t.t2AB = line_integral([&](double u) { return norm_pdf2(u, -mu_B - gt, rho); },
                         std::max(-mu_A, -mu_A - gt), kInf);
  t.t3AB = line_integral([&](double u) { return norm_pdf2(-mu_A - gt, u, rho); },
                         std::max(-mu_B, -mu_B - gt), kInf);
  return t;
}

Eigen::Matrix3d analytic_jacobian(const Theta& theta, const XDist& x_dist,
                                  const ShareVector& p) {
  validate(theta);
  validate(x_dist, theta.n_cov());
  validate(p);
  const double sA = theta.s_A, sB = theta.s_B, sAB = theta.s_AB;
  const double r2 = std::sqrt(2.0);
  Eigen::Matrix3d J = Eigen::Matrix3d::Zero();
  for (const auto& row : x_dist) {
    const double dA = dot(theta.beta_A, row.x.x);
    const double dB = dot(theta.beta_B, row.x.x);
    const TTerms t = boundary_integrals(theta, dA, dB, p);
    Eigen::Matrix3d Jr;
    Jr(0, 0) = sA * t.t1A + sA / r2 * t.t2A;
    Jr(0, 1) = -sB / r2 * t.t2A - sB * t.t3A;
    Jr(0, 2) = sA * t.t1A + (sA - sB) / r2 * t.t2A + (sA - sAB) * t.t3A;
    Jr(1, 0) = -sA / r2 * t.t2B - sA * t.t3B;
    Jr(1, 1) = sB * t.t1B + sB / r2 * t.t2B;
    Jr(1, 2) = sB * t.t1B + (sB - sA) / r2 * t.t2B + (sB - sAB) * t.t3B;
    Jr(2, 0) = sA / r2 * t.t1AB + sA * t.t3AB;
    Jr(2, 1) = sB / r2 * t.t1AB + sB * t.t2AB;
    Jr(2, 2) = sAB / r2 * t.t1AB + (sAB - sA) * t.t2AB + (sAB - sB) * t.t3AB;
    J += row.weight * Jr;
  }
  return J;
}

Eigen::Matrix3d fd_jacobian(const Theta& theta, const XDist& x_dist, const ShareVector& p,
                            const QuadratureSpec& quad, double step) {
  validate(theta);
  validate(x_dist, theta.n_cov());
  validate(p);
  validate(quad);
  if (!(step > 0)) throw invalid_input_error("finite-difference step must be positive");
  return fd_jacobian(ResponseMap(theta, x_dist, quad), p, step);
}

const char* to_string(TheoremBranch b) {
  switch (b) {
    case TheoremBranch::complements: return "complements";
    case TheoremBranch::independent: return "independent";
    case TheoremBranch::substitutes: return "substitutes";
    default: return "indeterminate";
  }
}

const char* to_string(NumericalSign s) {
  switch (s) {
    case NumericalSign::positive: return "positive";
    case NumericalSign::negative: return "negative";
    default: return "zero";
  }
}

std::vector<ClassificationVerdict> classify(const Theta& theta, const XDist& x_dist,
                                            const QuadratureSpec& quad,
                                            const EquilibriumOpts& opts) {
  constexpr double tau_zero = 1e-9;
  constexpr double tau_sign = 1e-4;

  const double D = theta.s_AB - theta.s_A - theta.s_B;
  const bool g_pos = theta.gamma > tau_zero, g_neg = theta.gamma < -tau_zero;
  const bool d_pos = D > tau_zero, d_neg = D < -tau_zero;
  const bool g_zero = !g_pos && !g_neg, d_zero = !d_pos && !d_neg;

  TheoremBranch branch = TheoremBranch::indeterminate;
  if ((g_pos && !d_neg) || (g_zero && d_pos))
    branch = TheoremBranch::complements;
  else if (g_zero && d_zero)
    branch = TheoremBranch::independent;
  else if ((g_neg && !d_pos) || (g_zero && d_neg))
    branch = TheoremBranch::substitutes;

  auto eqs = solve_equilibrium(theta, x_dist, quad, opts);
  std::vector<ClassificationVerdict> verdicts;
  for (auto& e : eqs) {
    if (!e.converged || !e.stable) continue;
    ClassificationVerdict v;
    v.theorem_branch = branch;
    if (e.dQA_ddeltaB) {
      const double d = *e.dQA_ddeltaB;
      v.numerical_sign = d > tau_sign    ? NumericalSign::positive
               : d < -tau_sign ? NumericalSign::negative
                               : NumericalSign::zero;
      switch (branch) {
        case TheoremBranch::complements: v.agree = v.numerical_sign == NumericalSign::positive; break;
        case TheoremBranch::independent: v.agree = v.numerical_sign == NumericalSign::zero; break;
        case TheoremBranch::substitutes: v.agree = v.numerical_sign == NumericalSign::negative; break;
        default: v.agree = true;
      }
    } else {
      v.numerical_sign = NumericalSign::zero;
      v.agree = false;
    }
    v.equilibrium = std::move(e);
    verdicts.push_back(std::move(v));
  }
  if (verdicts.empty())
    throw classification_unavailable_error("no stable equilibrium found from the start lattice");
  return verdicts;
}

}  // namespace normbundle
