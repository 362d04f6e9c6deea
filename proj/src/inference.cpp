#include "normbundle/inference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "normbundle/choice.hpp"

namespace normbundle {

namespace {

constexpr double kProbFloor = 1e-12;   // matches the likelihood floor
constexpr double kShareStep = 1e-5;    // share-perturbation step
constexpr double kSingularCond = 1e12;
constexpr double kPsdTol = -1e-10;

// One (group, period, covariate) pattern.  Rows at a group's first period
// carry no score (their choice probability has no lag) but their choices
// still feed a share cell, so they stay in the stacked moment system.
struct IUnit {
  CovariateRow x;
  ShareVector lag;
  bool scored = false;
  int cell = -1;  // own (group, period) cell in table order; -1 when absent
  std::array<std::int64_t, 4> counts{};
};

struct Stacked {
  std::vector<IUnit> units;
  std::vector<std::vector<int>> lag_users;  // per table cell: units lagging on it
  std::int64_t n_rows = 0;
};

Stacked build_stacked(const PanelDataset& data, const LaggedShareTable& table,
                      std::vector<std::string>& warnings) {
  std::map<std::int64_t, std::int64_t> first_period;
  for (const auto& r : data.rows) {
    auto it = first_period.find(r.group);
    if (it == first_period.end() || r.period < it->second) first_period[r.group] = r.period;
  }

  std::map<std::tuple<std::int64_t, std::int64_t, std::vector<double>>,
           std::array<std::int64_t, 4>>
      agg;
  for (const auto& r : data.rows) {
    if (r.choice < 0 || r.choice > 3) throw invalid_input_error("choice code outside 0..3");
    agg[{r.group, r.period, r.x}][static_cast<std::size_t>(r.choice)]++;
  }

  std::map<std::pair<std::int64_t, std::int64_t>, int> cell_index;
  for (std::size_t c = 0; c < table.cells.size(); ++c)
    cell_index[{table.cells[c].group, table.cells[c].period}] = static_cast<int>(c);

  Stacked st;
  st.lag_users.resize(table.cells.size());
  std::set<std::pair<std::int64_t, std::int64_t>> missing_warned;
  for (const auto& [key, counts] : agg) {
    const auto& [group, period, x] = key;
    IUnit u;
    u.x.x = x;
    u.x.group_id = static_cast<int>(group);
    u.x.period = static_cast<int>(period);
    u.counts = counts;
    auto own = cell_index.find({group, period});
    if (own == cell_index.end()) {
      if (missing_warned.insert({group, period}).second) {
        std::ostringstream os;
        os << "cell (group=" << group << ", period=" << period
           << ") missing from the share table; its moment contribution is skipped";
        warnings.push_back(os.str());
      }
    } else {
      u.cell = own->second;
    }
    u.scored = period > first_period[group];
    if (u.scored) {
      const CellShare* lag = table.find(group, period - 1);
      if (!lag) {
        std::ostringstream os;
        os << "no lagged shares for cell (group=" << group << ", period=" << period - 1 << ")";
        throw missing_lag_error(os.str());
      }
      u.lag = lag->q;
      st.lag_users[static_cast<std::size_t>(cell_index.at({group, period - 1}))].push_back(
          static_cast<int>(st.units.size()));
    }
    for (auto k : counts) st.n_rows += k;
    st.units.push_back(std::move(u));
  }
  return st;
}

ProbVector unit_probs(const ParamPacker& pk, const Eigen::VectorXd& v, const CovariateRow& x,
                      const ShareVector& lag, ShockGrid& grid) {
  const Theta th = pk.unpack(v);
  grid.set_rho(th.rho);
  const auto mu = mean_utilities(th, x, lag);
  return detail::smoothed_probs_core(mu[1], mu[2], gamma_tilde(th, lag), grid).q;
}

// P x 4 matrix of d log p(v) / d free-coordinate, central differences with the
// same per-coordinate step the fit's gradients use.
Eigen::MatrixXd unit_scores(const ParamPacker& pk, const Eigen::VectorXd& v,
                            const CovariateRow& x, const ShareVector& lag, ShockGrid& grid) {
  const Eigen::Index P = v.size();
  Eigen::MatrixXd S(P, 4);
  Eigen::VectorXd p = v;
  for (Eigen::Index k = 0; k < P; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(v[k]));
    p[k] = v[k] + h;
    const ProbVector qp = unit_probs(pk, p, x, lag, grid);
    p[k] = v[k] - h;
    const ProbVector qm = unit_probs(pk, p, x, lag, grid);
    p[k] = v[k];
    for (int c = 0; c < 4; ++c)
      S(k, c) = (std::log(std::max(qp[c], kProbFloor)) - std::log(std::max(qm[c], kProbFloor))) /
                (2.0 * h);
  }
  return S;
}

// choice -> indicator over the three share coordinates (p_A, p_B, p_AB)
Eigen::Vector3d choice_indicator(int v) {
  Eigen::Vector3d e = Eigen::Vector3d::Zero();
  if (v == kA) e[0] = 1.0;
  if (v == kB) e[1] = 1.0;
  if (v == kAB) e[2] = 1.0;
  return e;
}

Eigen::MatrixXd psd_clip(const Eigen::MatrixXd& V, const char* label,
                         std::vector<std::string>& warnings) {
  Eigen::MatrixXd sym = 0.5 * (V + V.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() >= 0.0) return sym;
  std::ostringstream os;
  os << label << " eigenvalue " << ev.minCoeff() << " clipped to zero";
  if (ev.minCoeff() < kPsdTol) os << " (below the -1e-10 tolerance)";
  warnings.push_back(os.str());
  for (Eigen::Index k = 0; k < ev.size(); ++k) ev[k] = std::max(ev[k], 0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double chi2_1_pvalue(double statistic) {
  if (!(statistic > 0.0)) return 1.0;
  return std::erfc(std::sqrt(statistic) / std::sqrt(2.0));
}

namespace detail {

Eigen::MatrixXd assemble_a_qq(const LaggedShareTable& table, std::int64_t n_rows) {
  if (n_rows <= 0) throw invalid_input_error("share moment system needs a positive row count");
  const Eigen::Index C = static_cast<Eigen::Index>(table.cells.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3 * C, 3 * C);
  for (Eigen::Index c = 0; c < C; ++c) {
    const auto& cell = table.cells[static_cast<std::size_t>(c)];
    if (cell.n <= 0) throw invalid_input_error("share table cell with nonpositive count");
    const double scale = -static_cast<double>(cell.n) / static_cast<double>(n_rows);
    A.block<3, 3>(3 * c, 3 * c) = scale * Eigen::Matrix3d::Identity();
  }
  return A;
}

}  // namespace detail

InferenceResult sandwich(const PanelDataset& data, const FitResult& fit, const FitConfig& cfg) {
  if (!fit.converged) throw invalid_input_error("sandwich requires a converged fit");
  if (data.rows.empty()) throw invalid_input_error("dataset has no rows");
  const std::size_t n_cov = data.covariate_names.size();
  validate(cfg, n_cov);

  const ParamPacker pk(n_cov, cfg.exclusion, cfg.restrict_additive, cfg.s_nonnegative,
                       cfg.fix_spillovers);
  const Eigen::Index P = pk.dim();
  if (fit.free_values.size() != P)
    throw invalid_input_error("fit free parameters do not match the configuration");
  const Eigen::VectorXd& xhat = fit.free_values;
  const LaggedShareTable& table = fit.lagged_share_table;

  InferenceResult out;
  for (const auto& c : table.cells) {
    if (!c.small) continue;
    std::ostringstream os;
    os << "small cell (group=" << c.group << ", period=" << c.period << "): n=" << c.n;
    out.warnings.push_back(os.str());
  }

  Stacked st = build_stacked(data, table, out.warnings);
  const double N = static_cast<double>(st.n_rows);
  ShockGrid grid(cfg.quad);

  // per-unit score matrices at the optimum
  std::vector<Eigen::MatrixXd> scores(st.units.size());
  for (std::size_t i = 0; i < st.units.size(); ++i)
    if (st.units[i].scored)
      scores[i] = unit_scores(pk, xhat, st.units[i].x, st.units[i].lag, grid);

  // jacobian of the mean score in theta: second differences of the mean loglik
  auto mean_ll = [&](const Eigen::VectorXd& v) {
    const Theta th = pk.unpack(v);
    grid.set_rho(th.rho);
    double total = 0.0;
    for (const auto& u : st.units) {
      if (!u.scored) continue;
      const auto mu = mean_utilities(th, u.x, u.lag);
      const auto sr = detail::smoothed_probs_core(mu[1], mu[2], gamma_tilde(th, u.lag), grid);
      for (int v4 = 0; v4 < 4; ++v4)
        if (u.counts[v4])
          total += static_cast<double>(u.counts[v4]) * std::log(std::max(sr.q[v4], kProbFloor));
    }
    return total / N;
  };
  const Eigen::MatrixXd A_tt = fd_hessian(mean_ll, xhat);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> aes(0.5 * (A_tt + A_tt.transpose()));
  const Eigen::VectorXd aev = aes.eigenvalues();
  const double ev_max = aev.cwiseAbs().maxCoeff();
  const double ev_min = aev.cwiseAbs().minCoeff();
  out.a_condition = ev_min > 0.0 ? ev_max / ev_min : std::numeric_limits<double>::infinity();
  if (!(out.a_condition < kSingularCond)) {
    std::ostringstream os;
    os << "score jacobian is numerically singular (condition number " << out.a_condition << ")";
    throw non_invertible_information_error(os.str());
  }
  const Eigen::MatrixXd A_inv =
      aes.eigenvectors() * aev.cwiseInverse().asDiagonal() * aes.eigenvectors().transpose();

  // jacobian of the mean score in the stacked shares, one 3-column block per
  // cell, by perturbing that cell's shares and re-scoring the units lagging
  // on it; simplex-infeasible directions fall back to one-sided differences
  const Eigen::Index C = static_cast<Eigen::Index>(table.cells.size());
  Eigen::MatrixXd A_tq = Eigen::MatrixXd::Zero(P, 3 * C);
  for (Eigen::Index c = 0; c < C; ++c) {
    const auto& users = st.lag_users[static_cast<std::size_t>(c)];
    if (users.empty()) continue;  // nothing lags on a last-period cell
    const ShareVector base = table.cells[static_cast<std::size_t>(c)].q;
    const double mass = base.p_A + base.p_B + base.p_AB;
    for (int r = 0; r < 3; ++r) {
      const bool up_ok = mass + kShareStep <= 1.0;
      const double comp = r == 0 ? base.p_A : (r == 1 ? base.p_B : base.p_AB);
      const bool down_ok = comp - kShareStep >= 0.0;
      if (!up_ok && !down_ok) {
        std::ostringstream os;
        os << "cell (group=" << table.cells[static_cast<std::size_t>(c)].group
           << ", period=" << table.cells[static_cast<std::size_t>(c)].period
           << ") share component " << r
           << " cannot move inside the simplex; zero column kept";
        out.warnings.push_back(os.str());
        continue;
      }
      auto shifted = [&](double delta) {
        ShareVector q = base;
        if (r == 0) q.p_A += delta;
        if (r == 1) q.p_B += delta;
        if (r == 2) q.p_AB += delta;
        return q;
      };
      Eigen::VectorXd col = Eigen::VectorXd::Zero(P);
      const double span = (up_ok && down_ok) ? 2.0 * kShareStep : kShareStep;
      for (int ui : users) {
        const IUnit& u = st.units[static_cast<std::size_t>(ui)];
        const Eigen::MatrixXd hi = up_ok
            ? unit_scores(pk, xhat, u.x, shifted(kShareStep), grid)
            : scores[static_cast<std::size_t>(ui)];
        const Eigen::MatrixXd lo = down_ok
            ? unit_scores(pk, xhat, u.x, shifted(-kShareStep), grid)
            : scores[static_cast<std::size_t>(ui)];
        for (int v4 = 0; v4 < 4; ++v4)
          if (u.counts[v4])
            col += static_cast<double>(u.counts[v4]) * (hi.col(v4) - lo.col(v4));
      }
      A_tq.col(3 * c + r) = col / (span * N);
    }
  }

  const Eigen::MatrixXd A_qq = detail::assemble_a_qq(table, st.n_rows);
  const Eigen::MatrixXd K = A_tq * A_qq.inverse();

  // middle matrices: adjusted and raw score outer products
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(P, P);
  Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(P, P);
  for (std::size_t i = 0; i < st.units.size(); ++i) {
    const IUnit& u = st.units[i];
    Eigen::Vector3d qown = Eigen::Vector3d::Zero();
    if (u.cell >= 0) {
      const ShareVector& q = table.cells[static_cast<std::size_t>(u.cell)].q;
      qown << q.p_A, q.p_B, q.p_AB;
    }
    for (int v4 = 0; v4 < 4; ++v4) {
      if (!u.counts[v4]) continue;
      const double w = static_cast<double>(u.counts[v4]);
      Eigen::VectorXd s = u.scored ? Eigen::VectorXd(scores[i].col(v4))
                                   : Eigen::VectorXd(Eigen::VectorXd::Zero(P));
      if (u.scored) B0 += w * s * s.transpose();
      if (u.cell >= 0) s -= K.middleCols(3 * u.cell, 3) * (choice_indicator(v4) - qown);
      B += w * s * s.transpose();
    }
  }
  B /= N;
  B0 /= N;

  Eigen::MatrixXd vcov = A_inv * B * A_inv / N;
  Eigen::MatrixXd vcov0 = A_inv * B0 * A_inv / N;
  vcov = psd_clip(vcov, "variance", out.warnings);
  vcov0 = psd_clip(vcov0, "uncorrected variance", out.warnings);

  // report on the parameter scale: the rho coordinate rides its precursor
  const int ri = pk.idx_rho();
  const double drho = 1.0 - fit.theta_hat.rho * fit.theta_hat.rho;
  vcov.row(ri) *= drho;
  vcov.col(ri) *= drho;
  vcov0.row(ri) *= drho;
  vcov0.col(ri) *= drho;

  out.vcov = vcov;
  out.vcov_uncorrected = vcov0;
  out.se = vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.se_uncorrected = vcov0.diagonal().cwiseMax(0.0).cwiseSqrt();

  if (pk.idx_sAB() >= 0) {
    Eigen::VectorXd contrast = Eigen::VectorXd::Zero(P);
    contrast[pk.idx_sAB()] = 1.0;
    contrast[pk.idx_sA()] = -1.0;
    contrast[pk.idx_sB()] = -1.0;
    const double diff = fit.theta_hat.s_AB - fit.theta_hat.s_A - fit.theta_hat.s_B;
    const double var = contrast.dot(vcov * contrast);
    WaldTest w;
    if (var > 0.0) {
      w.statistic = diff * diff / var;
      w.p_value = chi2_1_pvalue(w.statistic);
    } else {
      w.statistic = std::numeric_limits<double>::quiet_NaN();
      w.p_value = std::numeric_limits<double>::quiet_NaN();
      out.warnings.push_back("additivity contrast variance is not positive");
    }
    out.wald_additivity = w;
  }

  return out;
}

}  // namespace normbundle
