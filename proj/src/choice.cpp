#include "normbundle/choice.hpp"

#include <cmath>

#include "normbundle/rng.hpp"

namespace normbundle {

namespace detail {

SmoothedResult smoothed_probs_core(double u_A, double u_B, double gt, const ShockGrid& grid) {
  const int n = grid.n();
  const std::vector<double>& z = grid.z();
  const double inv_eps = 1.0 / grid.epsilon();

  // sigmoid args beyond +-40 are 1/0 to double precision; skipping the exp
  // there keeps the inner loop cheap away from choice boundaries
  auto sig = [](double t) {
    if (t > 40.0) return 1.0;
    if (t < -40.0) return 0.0;
    return 1.0 / (1.0 + std::exp(-t));
  };

  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0, raw = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = u_A + z[i];
    const double* dw = grid.dw_row(i);
    for (int j = 0; j < n; ++j) {
      const double b = u_B + z[j];
      const double c = a + b + gt;

      // top two of {0, a, b, c}, remembering which is on top
      double m1, m2;
      int top;
      if (a > 0.0) {
        m1 = a; m2 = 0.0; top = 1;
      } else {
        m1 = 0.0; m2 = a; top = 0;
      }
      if (b > m1) {
        m2 = m1; m1 = b; top = 2;
      } else if (b > m2) {
        m2 = b;
      }
      if (c > m1) {
        m2 = m1; m1 = c; top = 3;
      } else if (c > m2) {
        m2 = c;
      }

      // smoothed indicator of v: sigma((u_v - max over others)/eps); for the
      // top bundle the max over others is the runner-up
      const double gap = (m1 - m2) * inv_eps;
      const double p0 = top == 0 ? sig(gap) : sig((0.0 - m1) * inv_eps);
      const double p1 = top == 1 ? sig(gap) : sig((a - m1) * inv_eps);
      const double p2 = top == 2 ? sig(gap) : sig((b - m1) * inv_eps);
      const double p3 = top == 3 ? sig(gap) : sig((c - m1) * inv_eps);

      // the indicator 4-vector overshoots 1 near corners where three bundles
      // nearly tie; renormalize it at the node so every node contributes a
      // proper conditional distribution (the overshoot stays visible in the
      // diagnostic below)
      const double t = p0 + p1 + p2 + p3;
      const double w = dw[j];
      const double wn = w / t;
      a0 += wn * p0;
      a1 += wn * p1;
      a2 += wn * p2;
      a3 += wn * p3;
      raw += w * t;
    }
  }

  const double total = a0 + a1 + a2 + a3;  // = density mass in the box
  SmoothedResult out;
  out.prenorm_residual = raw - 1.0;
  out.q = {a0 / total, a1 / total, a2 / total, a3 / total};
  return out;
}

}  // namespace detail

static void check_finite_utilities(const std::array<double, 4>& u) {
  static const char* names[4] = {"u_empty", "u_A", "u_B", "u_AB"};
  for (int v = 0; v < 4; ++v)
    if (!std::isfinite(u[v]))
      throw numeric_overflow_error(std::string("non-finite utility ") + names[v]);
}

SmoothedResult smoothed_choice_probs_ex(const Theta& theta, const CovariateRow& x,
                                        const ShareVector& lag, ShockGrid& grid) {
  const std::array<double, 4> u = mean_utilities(theta, x, lag);
  check_finite_utilities(u);
  grid.set_rho(theta.rho);
  return detail::smoothed_probs_core(u[1], u[2], u[3] - u[1] - u[2], grid);
}

ProbVector smoothed_choice_probs(const Theta& theta, const CovariateRow& x,
                                 const ShareVector& lag, const QuadratureSpec& quad) {
  ShockGrid grid(quad);
  return smoothed_choice_probs_ex(theta, x, lag, grid).q;
}

ProbVector mc_choice_probs(const Theta& theta, const CovariateRow& x, const ShareVector& lag,
                           std::int64_t n_draws, std::uint64_t seed) {
  if (n_draws < 1) throw invalid_input_error("mc_choice_probs needs n_draws >= 1");
  if (!(theta.rho > -1.0 && theta.rho < 1.0))
    throw invalid_input_error("rho must lie strictly inside (-1,1)");
  const std::array<double, 4> u = mean_utilities(theta, x, lag);
  check_finite_utilities(u);

  constexpr int kSub = 64;
  std::int64_t counts[4] = {0, 0, 0, 0};
  const std::int64_t base = n_draws / kSub;
  const std::int64_t rem = n_draws % kSub;
  for (int k = 0; k < kSub; ++k) {
    const std::int64_t m = base + (k < rem ? 1 : 0);
    if (m == 0) continue;
    NormalSampler rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::int64_t c[4] = {0, 0, 0, 0};
    for (std::int64_t d = 0; d < m; ++d) {
      double z_A, z_B;
      rng.shock_pair(theta.rho, z_A, z_B);
      const double uA = u[1] + z_A;
      const double uB = u[2] + z_B;
      const double uAB = u[3] + z_A + z_B;
      // strict argmax; on exact ties the earlier bundle in (empty,A,B,AB) wins
      int best = kEmpty;
      double bu = 0.0;
      if (uA > bu) { bu = uA; best = kA; }
      if (uB > bu) { bu = uB; best = kB; }
      if (uAB > bu) { best = kAB; }
      ++c[best];
    }
    for (int v = 0; v < 4; ++v) counts[v] += c[v];
  }

  const double inv = 1.0 / static_cast<double>(n_draws);
  return {counts[0] * inv, counts[1] * inv, counts[2] * inv, counts[3] * inv};
}

}  // namespace normbundle
